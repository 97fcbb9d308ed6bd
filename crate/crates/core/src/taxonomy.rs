//! Mapping from source segmenter IDs and open-vocabulary mask names to task classes.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::labels::IGNORE;

pub const DESK_TAXONOMY: &str = include_str!("../assets/desk_taxonomy.txt");
pub const REFERENCE_TAXONOMY: &str = include_str!("../assets/reference_taxonomy.txt");

pub const DESK_CLASSES: [&str; 12] = [
    "free", "car", "truck", "road", "sidewalk", "building", "fence", "vegetation", "trunk", "terrain", "pole", "traffic-sign",
];

pub const REFERENCE_CLASSES: [&str; 20] = [
    "free", "car", "bicycle", "motorcycle", "truck", "other-vehicle", "person", "bicyclist", "motorcyclist", "road", "parking",
    "sidewalk", "other-ground", "building", "fence", "vegetation", "trunk", "terrain", "pole", "traffic-sign",
];

/// Source IDs the desk scenes render with.
pub mod source {
    pub const CAR: u16 = 176;
    pub const TRUCK: u16 = 182;
    pub const ROAD: u16 = 98;
    pub const SIDEWALK: u16 = 100;
    pub const BUILDING: u16 = 35;
    pub const FENCE: u16 = 144;
    pub const VEGETATION: u16 = 174;
    pub const TERRAIN: u16 = 102;
    pub const POLE: u16 = 143;
    pub const TRAFFIC_SIGN: u16 = 135;
    pub const SKY: u16 = 142;
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassTaxonomy {
    primary: BTreeMap<u16, u16>,
    auxiliary: Vec<(String, u16)>,
    num_classes: usize,
}

impl ClassTaxonomy {
    pub fn new(primary: BTreeMap<u16, u16>, auxiliary: Vec<(String, u16)>, num_classes: usize) -> Result<Self> {
        let too_big = primary
            .values()
            .chain(auxiliary.iter().map(|(_, c)| c))
            .find(|&&c| c as usize >= num_classes);
        if let Some(c) = too_big {
            return Err(Error::Taxonomy(format!("task class {c} is not below {num_classes}")));
        }
        Ok(Self {
            primary,
            auxiliary,
            num_classes,
        })
    }

    /// Parses `source_id task_id` and `AUX name task_id` lines; `#` starts a comment.
    pub fn parse(text: &str, num_classes: usize) -> Result<Self> {
        let mut primary = BTreeMap::new();
        let mut auxiliary = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Taxonomy(format!("line {}: {what}: `{line}`", n + 1));
            let parts: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<u16>().map_err(|_| bad("expected an integer"));
            match parts.as_slice() {
                ["AUX", name, id] => auxiliary.push((name.to_string(), num(id)?)),
                [src, id] => {
                    if primary.insert(num(src)?, num(id)?).is_some() {
                        return Err(bad("duplicate source ID"));
                    }
                }
                _ => return Err(bad("expected `source task` or `AUX name task`")),
            }
        }
        Self::new(primary, auxiliary, num_classes)
    }

    pub fn load(path: &Path, num_classes: usize) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, num_classes)
    }

    pub fn desk() -> Self {
        Self::parse(DESK_TAXONOMY, DESK_CLASSES.len()).expect("bundled desk taxonomy")
    }

    pub fn reference() -> Self {
        Self::parse(REFERENCE_TAXONOMY, REFERENCE_CLASSES.len()).expect("bundled reference taxonomy")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (s, t) in &self.primary {
            out += &format!("{s} {t}\n");
        }
        for (name, t) in &self.auxiliary {
            out += &format!("AUX {name} {t}\n");
        }
        out
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ignore_id(&self) -> u16 {
        IGNORE
    }

    /// Task class of a source ID, `IGNORE` when unmapped.
    pub fn map(&self, source: u16) -> u16 {
        self.primary.get(&source).copied().unwrap_or(IGNORE)
    }

    pub fn auxiliary(&self, name: &str) -> Option<u16> {
        self.auxiliary.iter().find(|(n, _)| n == name).map(|&(_, c)| c)
    }

    pub fn primary(&self) -> &BTreeMap<u16, u16> {
        &self.primary
    }

    pub fn auxiliary_classes(&self) -> &[(String, u16)] {
        &self.auxiliary
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_table_rows() {
        let t = ClassTaxonomy::reference();
        assert_eq!(t.map(176), 1);
        assert_eq!(t.map(174), 15);
        assert_eq!(t.auxiliary("trunk"), Some(16));
        assert_eq!(t.map(source::SKY), IGNORE);
    }

    #[test]
    fn text_round_trip() {
        let t = ClassTaxonomy::desk();
        assert_eq!(ClassTaxonomy::parse(&t.to_text(), 12).unwrap(), t);
    }

    #[test]
    fn rejects_duplicates_and_out_of_range() {
        assert!(ClassTaxonomy::parse("1 2\n1 3\n", 5).is_err());
        assert!(ClassTaxonomy::parse("1 7\n", 5).is_err());
        assert!(ClassTaxonomy::parse("AUX x\n", 5).is_err());
    }
}
