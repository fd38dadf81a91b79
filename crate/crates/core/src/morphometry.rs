//! Morphological phenotypes as distances between keypoint pairs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keypoints::{distance, KeypointIndex, KeypointSet, NUM_KEYPOINTS};

#[derive(Debug, Error, PartialEq)]
pub enum MorphometryError {
    #[error("image {image_id}: phenotype {abbrev} needs {keypoint}, which is not labeled")]
    MissingKeypoint {
        image_id: u64,
        abbrev: String,
        keypoint: KeypointIndex,
    },
    #[error("image {image_id}: no measurable phenotype contains {keypoint}")]
    NoRelatedPhenotype {
        image_id: u64,
        keypoint: KeypointIndex,
    },
    #[error("invalid phenotype table: {0}")]
    InvalidTable(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhenotypeDef {
    pub abbrev: String,
    pub name: String,
    pub endpoints: (KeypointIndex, KeypointIndex),
}

impl PhenotypeDef {
    pub fn contains(&self, k: KeypointIndex) -> bool {
        self.endpoints.0 == k || self.endpoints.1 == k
    }

    /// Endpoint distance on any keypoint set, ignoring visibility.
    pub fn length(&self, keypoints: &KeypointSet) -> f64 {
        distance(
            keypoints.get(self.endpoints.0).xy(),
            keypoints.get(self.endpoints.1).xy(),
        )
    }
}

const STANDARD: [(&str, &str, usize, usize); 23] = [
    ("TL", "total length", 1, 9),
    ("SL", "standard length", 1, 10),
    ("HL", "head length", 1, 2),
    ("SnL", "snout length", 1, 11),
    ("ED", "eye diameter", 11, 12),
    ("PoL", "postorbital length", 12, 2),
    ("BD", "body depth", 5, 6),
    ("HD", "head depth", 3, 4),
    ("PeAD", "pelvic-anal fin origin distance", 15, 17),
    ("CPD", "caudal peduncle depth", 7, 8),
    ("CPL", "caudal peduncle length", 18, 10),
    ("DFL", "dorsal fin length", 20, 21),
    ("DFH", "dorsal fin height", 20, 22),
    ("PcL", "pectoral fin length", 13, 14),
    ("PeL", "pelvic fin length", 15, 16),
    ("AFL", "anal fin length", 17, 18),
    ("AFH", "anal fin height", 17, 19),
    ("TFL", "tail fin length", 10, 9),
    ("PrDL", "predorsal length", 1, 20),
    ("PoDL", "postdorsal length", 20, 10),
    ("PcDD", "pectoral-dorsal fin origin distance", 13, 20),
    ("PcPeD", "pectoral-pelvic fin origin distance", 13, 15),
    ("PeDD", "pelvic-dorsal fin origin distance", 15, 20),
];

/// Number of phenotypes in the standard table.
pub const NUM_PHENOTYPES: usize = STANDARD.len();

/// The 23 phenotype definitions, in table order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PhenotypeDef>", into = "Vec<PhenotypeDef>")]
pub struct PhenotypeTable {
    defs: Vec<PhenotypeDef>,
}

impl PhenotypeTable {
    pub fn new(defs: Vec<PhenotypeDef>) -> Result<Self, MorphometryError> {
        if defs.len() != NUM_PHENOTYPES {
            return Err(MorphometryError::InvalidTable(format!(
                "expected {NUM_PHENOTYPES} phenotypes, got {}",
                defs.len()
            )));
        }
        let mut covered = [false; NUM_KEYPOINTS];
        for (i, d) in defs.iter().enumerate() {
            if d.endpoints.0 == d.endpoints.1 {
                return Err(MorphometryError::InvalidTable(format!(
                    "{} uses {} twice",
                    d.abbrev, d.endpoints.0
                )));
            }
            if defs[..i].iter().any(|e| e.abbrev == d.abbrev) {
                return Err(MorphometryError::InvalidTable(format!(
                    "duplicate abbreviation {}",
                    d.abbrev
                )));
            }
            covered[d.endpoints.0.slot()] = true;
            covered[d.endpoints.1.slot()] = true;
        }
        if let Some(slot) = covered.iter().position(|c| !c) {
            return Err(MorphometryError::InvalidTable(format!(
                "{} is not used by any phenotype",
                KeypointIndex::from_slot(slot)
            )));
        }
        Ok(PhenotypeTable { defs })
    }

    pub fn standard() -> Self {
        let defs = STANDARD
            .iter()
            .map(|&(abbrev, name, a, b)| PhenotypeDef {
                abbrev: abbrev.to_string(),
                name: name.to_string(),
                endpoints: (
                    KeypointIndex::new(a).unwrap(),
                    KeypointIndex::new(b).unwrap(),
                ),
            })
            .collect();
        PhenotypeTable::new(defs).expect("standard table is valid")
    }

    pub fn defs(&self) -> &[PhenotypeDef] {
        &self.defs
    }

    pub fn find(&self, abbrev: &str) -> Option<&PhenotypeDef> {
        self.defs.iter().find(|d| d.abbrev == abbrev)
    }

    /// Phenotypes using keypoint `k`, in table order.
    pub fn related(&self, k: KeypointIndex) -> impl Iterator<Item = &PhenotypeDef> {
        self.defs.iter().filter(move |d| d.contains(k))
    }
}

impl Default for PhenotypeTable {
    fn default() -> Self {
        PhenotypeTable::standard()
    }
}

impl TryFrom<Vec<PhenotypeDef>> for PhenotypeTable {
    type Error = MorphometryError;

    fn try_from(defs: Vec<PhenotypeDef>) -> Result<Self, Self::Error> {
        PhenotypeTable::new(defs)
    }
}

impl From<PhenotypeTable> for Vec<PhenotypeDef> {
    fn from(table: PhenotypeTable) -> Self {
        table.defs
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementStatus {
    Ok,
    /// Coincident endpoints: the measurement is zero.
    Degenerate,
}

impl MeasurementStatus {
    pub fn tag(self) -> &'static str {
        match self {
            MeasurementStatus::Ok => "ok",
            MeasurementStatus::Degenerate => "degenerate",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhenotypeMeasurement {
    pub image_id: u64,
    pub abbrev: String,
    /// Length in pixels.
    pub value: f64,
    pub status: MeasurementStatus,
}

/// Measures one phenotype. Both endpoints must be labeled.
pub fn measure(
    keypoints: &KeypointSet,
    def: &PhenotypeDef,
) -> Result<PhenotypeMeasurement, MorphometryError> {
    for k in [def.endpoints.0, def.endpoints.1] {
        if !keypoints.get(k).is_labeled() {
            return Err(MorphometryError::MissingKeypoint {
                image_id: keypoints.image_id,
                abbrev: def.abbrev.clone(),
                keypoint: k,
            });
        }
    }
    let value = def.length(keypoints);
    let status = if value == 0.0 {
        log::warn!(
            "image {}: {} endpoints coincide, measurement is zero",
            keypoints.image_id,
            def.abbrev
        );
        MeasurementStatus::Degenerate
    } else {
        MeasurementStatus::Ok
    };
    Ok(PhenotypeMeasurement {
        image_id: keypoints.image_id,
        abbrev: def.abbrev.clone(),
        value,
        status,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedPhenotype {
    pub image_id: u64,
    pub abbrev: String,
    pub missing: Vec<KeypointIndex>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub measurements: Vec<PhenotypeMeasurement>,
    pub skipped: Vec<SkippedPhenotype>,
}

/// Measures every phenotype whose endpoints are labeled; the rest are reported as skipped.
pub fn measure_all(keypoints: &KeypointSet, table: &PhenotypeTable) -> MeasurementSet {
    let mut out = MeasurementSet::default();
    for def in table.defs() {
        match measure(keypoints, def) {
            Ok(m) => out.measurements.push(m),
            Err(_) => out.skipped.push(SkippedPhenotype {
                image_id: keypoints.image_id,
                abbrev: def.abbrev.clone(),
                missing: [def.endpoints.0, def.endpoints.1]
                    .into_iter()
                    .filter(|&k| !keypoints.get(k).is_labeled())
                    .collect(),
            }),
        }
    }
    out
}

/// The measurable phenotype containing `keypoint` with the smallest ground-truth
/// length. Ties go to the earlier table entry.
pub fn shortest_related_phenotype(
    keypoint: KeypointIndex,
    ground_truth: &KeypointSet,
    table: &PhenotypeTable,
) -> Result<PhenotypeMeasurement, MorphometryError> {
    let mut best: Option<(&PhenotypeDef, f64)> = None;
    for def in table.related(keypoint) {
        let a = ground_truth.get(def.endpoints.0);
        let b = ground_truth.get(def.endpoints.1);
        if !a.is_labeled() || !b.is_labeled() {
            continue;
        }
        let len = def.length(ground_truth);
        if best.is_none_or(|(_, l)| len < l) {
            best = Some((def, len));
        }
    }
    let (def, value) = best.ok_or(MorphometryError::NoRelatedPhenotype {
        image_id: ground_truth.image_id,
        keypoint,
    })?;
    Ok(PhenotypeMeasurement {
        image_id: ground_truth.image_id,
        abbrev: def.abbrev.clone(),
        value,
        status: if value == 0.0 {
            MeasurementStatus::Degenerate
        } else {
            MeasurementStatus::Ok
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keypoints::{Keypoint, Species};
    use proptest::prelude::*;

    fn k(i: usize) -> KeypointIndex {
        KeypointIndex::new(i).unwrap()
    }

    fn all_at_origin() -> KeypointSet {
        KeypointSet::new(
            1,
            Species::Other,
            [Keypoint::visible(0.0, 0.0); NUM_KEYPOINTS],
        )
    }

    #[test]
    fn table_shape() {
        let t = PhenotypeTable::standard();
        assert_eq!(t.defs().len(), 23);
        let ed = t.find("ED").unwrap();
        assert_eq!(ed.endpoints, (k(11), k(12)));
        let k11: Vec<_> = t.related(k(11)).map(|d| d.abbrev.as_str()).collect();
        assert_eq!(k11, ["SnL", "ED"]);
        let k22: Vec<_> = t.related(k(22)).map(|d| d.abbrev.as_str()).collect();
        assert_eq!(k22, ["DFH"]);
    }

    #[test]
    fn table_validation() {
        let mut defs: Vec<_> = PhenotypeTable::standard().defs().to_vec();
        defs[0].abbrev = "SL".into();
        assert!(PhenotypeTable::new(defs.clone()).is_err());
        defs.pop();
        assert!(PhenotypeTable::new(defs).is_err());
        let mut defs: Vec<_> = PhenotypeTable::standard().defs().to_vec();
        // DFH is the only user of K-22
        defs[12].endpoints = (k(20), k(21));
        assert!(matches!(
            PhenotypeTable::new(defs),
            Err(MorphometryError::InvalidTable(m)) if m.contains("K-22")
        ));
    }

    #[test]
    fn measure_three_four_five() {
        let t = PhenotypeTable::standard();
        let mut s = all_at_origin();
        s.points[8] = Keypoint::visible(3.0, 4.0);
        let m = measure(&s, t.find("TL").unwrap()).unwrap();
        assert_eq!(m.value, 5.0);
        assert_eq!(m.status, MeasurementStatus::Ok);
    }

    #[test]
    fn coincident_endpoints_are_degenerate() {
        let t = PhenotypeTable::standard();
        let m = measure(&all_at_origin(), t.find("HL").unwrap()).unwrap();
        assert_eq!(m.value, 0.0);
        assert_eq!(m.status, MeasurementStatus::Degenerate);
    }

    #[test]
    fn hidden_endpoint_is_error() {
        let t = PhenotypeTable::standard();
        let mut s = all_at_origin();
        s.points[10] = Keypoint::hidden();
        assert_eq!(
            measure(&s, t.find("ED").unwrap()),
            Err(MorphometryError::MissingKeypoint {
                image_id: 1,
                abbrev: "ED".into(),
                keypoint: k(11)
            })
        );
    }

    #[test]
    fn measure_all_counts() {
        let t = PhenotypeTable::standard();
        let mut s = all_at_origin();
        assert_eq!(measure_all(&s, &t).measurements.len(), 23);
        s.points[21] = Keypoint::hidden();
        let r = measure_all(&s, &t);
        assert_eq!(r.measurements.len(), 22);
        assert_eq!(r.skipped.len(), 1);
        assert_eq!(r.skipped[0].abbrev, "DFH");
        assert_eq!(r.skipped[0].missing, vec![k(22)]);
        let none = KeypointSet::new(1, Species::Other, [Keypoint::hidden(); NUM_KEYPOINTS]);
        let r = measure_all(&none, &t);
        assert!(r.measurements.is_empty());
        assert_eq!(r.skipped.len(), 23);
    }

    #[test]
    fn shortest_related_examples() {
        let t = PhenotypeTable::standard();
        let mut s = all_at_origin();
        // K-1 at origin, K-11 at 120, K-12 at 160: SnL = 120, ED = 40
        s.points[10] = Keypoint::visible(120.0, 0.0);
        s.points[11] = Keypoint::visible(160.0, 0.0);
        let m = shortest_related_phenotype(k(11), &s, &t).unwrap();
        assert_eq!((m.abbrev.as_str(), m.value), ("ED", 40.0));

        // TL = 500, TFL = 90
        let mut s = all_at_origin();
        s.points[8] = Keypoint::visible(500.0, 0.0);
        s.points[9] = Keypoint::visible(410.0, 0.0);
        let m = shortest_related_phenotype(k(9), &s, &t).unwrap();
        assert_eq!((m.abbrev.as_str(), m.value), ("TFL", 90.0));
    }

    #[test]
    fn shortest_related_ties_go_to_table_order() {
        let t = PhenotypeTable::standard();
        let mut s = all_at_origin();
        s.points[10] = Keypoint::visible(10.0, 0.0);
        s.points[11] = Keypoint::visible(20.0, 0.0);
        // SnL = ED = 10
        let m = shortest_related_phenotype(k(11), &s, &t).unwrap();
        assert_eq!(m.abbrev, "SnL");
    }

    #[test]
    fn shortest_related_without_partners() {
        let t = PhenotypeTable::standard();
        let mut s = all_at_origin();
        s.points[0] = Keypoint::hidden();
        s.points[11] = Keypoint::hidden();
        assert_eq!(
            shortest_related_phenotype(k(11), &s, &t),
            Err(MorphometryError::NoRelatedPhenotype {
                image_id: 1,
                keypoint: k(11)
            })
        );
    }

    fn arb_set() -> impl Strategy<Value = KeypointSet> {
        proptest::collection::vec(-500.0f64..500.0, 44).prop_map(|v| {
            let coords: [f64; 44] = v.try_into().unwrap();
            KeypointSet::from_coords(9, Species::Other, &coords)
        })
    }

    proptest! {
        #[test]
        fn measure_is_rigid_invariant(s in arb_set(), theta in -3.2f64..3.2, dx in -100.0f64..100.0, dy in -100.0f64..100.0) {
            let t = PhenotypeTable::standard();
            let (sn, cs) = theta.sin_cos();
            let mut moved = s.clone();
            for p in moved.points.iter_mut() {
                let (x, y) = (p.x, p.y);
                p.x = cs * x - sn * y + dx;
                p.y = sn * x + cs * y + dy;
            }
            for def in t.defs() {
                let a = measure(&s, def).unwrap().value;
                let b = measure(&moved, def).unwrap().value;
                prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
                let mut swapped = def.clone();
                swapped.endpoints = (def.endpoints.1, def.endpoints.0);
                prop_assert_eq!(measure(&s, &swapped).unwrap().value, a);
            }
        }

        #[test]
        fn shortest_is_a_lower_bound(s in arb_set()) {
            let t = PhenotypeTable::standard();
            for k in KeypointIndex::all() {
                let m = shortest_related_phenotype(k, &s, &t).unwrap();
                for def in t.related(k) {
                    prop_assert!(m.value <= def.length(&s));
                }
            }
        }
    }
}
