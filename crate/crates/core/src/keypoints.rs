//! The 22-keypoint fish schema and the per-image keypoint container.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Number of anatomical keypoints annotated per fish.
pub const NUM_KEYPOINTS: usize = 22;

/// Number of scalar coordinates in a flattened keypoint set (x, y per keypoint).
pub const NUM_COORDS: usize = 2 * NUM_KEYPOINTS;

/// Keypoint names in schema order (K-1 .. K-22).
pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] = [
    "snout tip",
    "posterior end of operculum",
    "top end of head",
    "isthmus",
    "dorsal apex",
    "bottom end of ventral margin",
    "top end of caudal peduncle",
    "bottom end of caudal peduncle",
    "posterior end of tail fin",
    "posterior end of caudal vertebrae",
    "anterior end of eye",
    "posterior end of eye",
    "anterior end of pectoral fin",
    "posterior end of pectoral fin",
    "anterior end of pelvic fin",
    "posterior end of pelvic fin",
    "anterior end of anal fin",
    "posterior end of anal fin",
    "outer margin of anal fin",
    "anterior end of dorsal fin",
    "posterior end of dorsal fin",
    "outer margin of dorsal fin",
];

/// One-based keypoint index in `1..=22`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct KeypointIndex(u8);

impl KeypointIndex {
    pub fn new(index: usize) -> Option<Self> {
        (1..=NUM_KEYPOINTS)
            .contains(&index)
            .then_some(KeypointIndex(index as u8))
    }

    /// Builds an index from a zero-based array slot.
    ///
    /// Panics if `slot >= 22`.
    pub fn from_slot(slot: usize) -> Self {
        assert!(slot < NUM_KEYPOINTS, "keypoint slot {slot} out of range");
        KeypointIndex(slot as u8 + 1)
    }

    /// One-based value as printed in tables (`K-<n>`).
    pub fn get(self) -> usize {
        self.0 as usize
    }

    /// Zero-based array slot.
    pub fn slot(self) -> usize {
        self.0 as usize - 1
    }

    pub fn name(self) -> &'static str {
        KEYPOINT_NAMES[self.slot()]
    }

    /// All 22 indices in schema order.
    pub fn all() -> impl Iterator<Item = KeypointIndex> {
        (0..NUM_KEYPOINTS).map(KeypointIndex::from_slot)
    }
}

impl TryFrom<u8> for KeypointIndex {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        KeypointIndex::new(value as usize)
            .ok_or_else(|| format!("keypoint index {value} outside 1..=22"))
    }
}

impl From<KeypointIndex> for u8 {
    fn from(value: KeypointIndex) -> Self {
        value.0
    }
}

impl fmt::Display for KeypointIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "K-{}", self.0)
    }
}

/// COCO visibility flag.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Visibility {
    #[default]
    NotLabeled,
    Occluded,
    Visible,
}

impl Visibility {
    pub fn from_flag(flag: u8) -> Option<Self> {
        match flag {
            0 => Some(Visibility::NotLabeled),
            1 => Some(Visibility::Occluded),
            2 => Some(Visibility::Visible),
            _ => None,
        }
    }

    pub fn flag(self) -> u8 {
        match self {
            Visibility::NotLabeled => 0,
            Visibility::Occluded => 1,
            Visibility::Visible => 2,
        }
    }

    /// `v > 0`: the keypoint is labeled and takes part in every metric.
    pub fn is_labeled(self) -> bool {
        self != Visibility::NotLabeled
    }
}

impl TryFrom<u8> for Visibility {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Visibility::from_flag(value)
            .ok_or_else(|| format!("visibility flag {value} not in {{0,1,2}}"))
    }
}

impl From<Visibility> for u8 {
    fn from(value: Visibility) -> Self {
        value.flag()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub v: Visibility,
}

impl Keypoint {
    pub fn visible(x: f64, y: f64) -> Self {
        Keypoint {
            x,
            y,
            v: Visibility::Visible,
        }
    }

    pub fn hidden() -> Self {
        Keypoint::default()
    }

    pub fn is_labeled(&self) -> bool {
        self.v.is_labeled()
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Species {
    Grouper,
    MottledNakedCarp,
    BigheadCarp,
    CommonCarp,
    #[default]
    Other,
}

impl Species {
    pub const ALL: [Species; 5] = [
        Species::Grouper,
        Species::MottledNakedCarp,
        Species::BigheadCarp,
        Species::CommonCarp,
        Species::Other,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Species::Grouper => "grouper",
            Species::MottledNakedCarp => "mottled_naked_carp",
            Species::BigheadCarp => "bighead_carp",
            Species::CommonCarp => "common_carp",
            Species::Other => "other",
        }
    }

    /// Lenient lookup: case, spaces and hyphens are ignored. Unknown names map to `Other`.
    pub fn from_name(name: &str) -> Species {
        let key: String = name
            .trim()
            .chars()
            .map(|c| match c {
                ' ' | '-' => '_',
                c => c.to_ascii_lowercase(),
            })
            .collect();
        Species::ALL
            .into_iter()
            .find(|s| s.tag() == key)
            .unwrap_or(Species::Other)
    }
}

impl fmt::Display for Species {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn has_positive_extent(&self) -> bool {
        self.width() > 0.0 && self.height() > 0.0
    }

    pub fn translated(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(
            self.x_min + dx,
            self.y_min + dy,
            self.x_max + dx,
            self.y_max + dy,
        )
    }

    /// Tight box around a set of points, `None` when the iterator is empty.
    pub fn enclosing<I: IntoIterator<Item = [f64; 2]>>(points: I) -> Option<BBox> {
        let mut it = points.into_iter();
        let [x, y] = it.next()?;
        let mut b = BBox::new(x, y, x, y);
        for [x, y] in it {
            b.x_min = b.x_min.min(x);
            b.y_min = b.y_min.min(y);
            b.x_max = b.x_max.max(x);
            b.y_max = b.y_max.max(y);
        }
        Some(b)
    }
}

/// The 22 keypoints of one fish image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub image_id: u64,
    #[serde(default)]
    pub species: Species,
    pub points: [Keypoint; NUM_KEYPOINTS],
}

impl KeypointSet {
    pub fn new(image_id: u64, species: Species, points: [Keypoint; NUM_KEYPOINTS]) -> Self {
        KeypointSet {
            image_id,
            species,
            points,
        }
    }

    /// All keypoints marked visible at the given flattened coordinates `[x1, y1, x2, y2, ...]`.
    pub fn from_coords(image_id: u64, species: Species, coords: &[f64; NUM_COORDS]) -> Self {
        let points = std::array::from_fn(|i| Keypoint::visible(coords[2 * i], coords[2 * i + 1]));
        KeypointSet::new(image_id, species, points)
    }

    pub fn get(&self, index: KeypointIndex) -> &Keypoint {
        &self.points[index.slot()]
    }

    pub fn get_mut(&mut self, index: KeypointIndex) -> &mut Keypoint {
        &mut self.points[index.slot()]
    }

    /// Coordinates of a labeled keypoint, `None` when `v == 0`.
    pub fn labeled(&self, index: KeypointIndex) -> Option<[f64; 2]> {
        let p = self.get(index);
        p.is_labeled().then(|| p.xy())
    }

    pub fn labeled_count(&self) -> usize {
        self.points.iter().filter(|p| p.is_labeled()).count()
    }

    /// Flattened `[x1, y1, ..., x22, y22]`, ignoring visibility.
    pub fn coords(&self) -> [f64; NUM_COORDS] {
        let mut out = [0.0; NUM_COORDS];
        for (i, p) in self.points.iter().enumerate() {
            out[2 * i] = p.x;
            out[2 * i + 1] = p.y;
        }
        out
    }

    /// Bounding rectangle of the labeled keypoints.
    pub fn bounding_box(&self) -> Option<BBox> {
        BBox::enclosing(
            self.points
                .iter()
                .filter(|p| p.is_labeled())
                .map(Keypoint::xy),
        )
    }
}

pub(crate) fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_bounds() {
        assert!(KeypointIndex::new(0).is_none());
        assert!(KeypointIndex::new(23).is_none());
        let k = KeypointIndex::new(22).unwrap();
        assert_eq!(k.slot(), 21);
        assert_eq!(k.to_string(), "K-22");
        assert_eq!(KeypointIndex::new(1).unwrap().name(), "snout tip");
        assert_eq!(KeypointIndex::all().count(), NUM_KEYPOINTS);
    }

    #[test]
    fn species_lookup_is_lenient() {
        assert_eq!(
            Species::from_name("Mottled Naked Carp"),
            Species::MottledNakedCarp
        );
        assert_eq!(Species::from_name("bighead-carp"), Species::BigheadCarp);
        assert_eq!(Species::from_name("catfish"), Species::Other);
    }

    #[test]
    fn bounding_box_skips_unlabeled() {
        let mut points = [Keypoint::hidden(); NUM_KEYPOINTS];
        points[0] = Keypoint::visible(10.0, 20.0);
        points[5] = Keypoint::visible(30.0, 5.0);
        let set = KeypointSet::new(1, Species::Other, points);
        let b = set.bounding_box().unwrap();
        assert_eq!(b, BBox::new(10.0, 5.0, 30.0, 20.0));
        assert_eq!(set.labeled_count(), 2);
    }

    #[test]
    fn visibility_flags() {
        assert_eq!(Visibility::from_flag(3), None);
        assert!(!Visibility::NotLabeled.is_labeled());
        assert!(Visibility::Occluded.is_labeled());
    }
}
