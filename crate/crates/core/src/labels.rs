//! Scene vocabulary and the coarse indoor/outdoor/transportation grouping.

use crate::error::{Error, Result};

/// The ten scene classes, in class-index order.
pub const SCENE_NAMES: [&str; 10] = [
    "airport",
    "bus",
    "metro",
    "metro_station",
    "park",
    "public_square",
    "shopping_mall",
    "street_pedestrian",
    "street_traffic",
    "tram",
];

pub const META_NAMES: [&str; 3] = ["indoor", "outdoor", "transportation"];

/// Meta-class of each scene class, indexed like [`SCENE_NAMES`].
pub const META_OF_SCENE: [usize; 10] = [0, 2, 2, 0, 1, 1, 0, 1, 1, 2];

pub fn class_index(name: &str) -> Result<usize> {
    SCENE_NAMES
        .iter()
        .position(|n| *n == name.trim())
        .ok_or_else(|| Error::Label(format!("unknown scene class {name:?}")))
}

pub fn class_name(index: usize) -> Result<&'static str> {
    SCENE_NAMES
        .get(index)
        .copied()
        .ok_or_else(|| Error::Label(format!("class index {index} out of range")))
}

/// Maps scene labels to meta-class labels.
pub fn to_meta(labels: &[usize]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&l| {
            META_OF_SCENE
                .get(l)
                .copied()
                .ok_or_else(|| Error::Label(format!("class index {l} out of range")))
        })
        .collect()
}
