//! Body-region vocabulary and the attribute-to-region map with horizontal
//! band fractions.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

/// The five semantic regions. `Body` spans the whole image; the others are
/// horizontal bands ordered top to bottom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Body,
    Head,
    Upper,
    Lower,
    Foot,
}

impl Region {
    pub const ALL: [Region; 5] = [
        Region::Body,
        Region::Head,
        Region::Upper,
        Region::Lower,
        Region::Foot,
    ];

    pub const NON_BODY: [Region; 4] = [Region::Head, Region::Upper, Region::Lower, Region::Foot];

    /// Index into the fixed region order (body first).
    pub fn index(self) -> usize {
        match self {
            Region::Body => 0,
            Region::Head => 1,
            Region::Upper => 2,
            Region::Lower => 3,
            Region::Foot => 4,
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Region::Body => "body",
            Region::Head => "head",
            Region::Upper => "upper",
            Region::Lower => "lower",
            Region::Foot => "foot",
        };
        f.write_str(s)
    }
}

/// Half-open vertical band `[lo, hi)` as fractions of image height.
pub type Band = (f64, f64);

/// True when grid row `row` of `n_rows` falls inside the band: the row's
/// top fraction `row / n_rows` must lie in `[lo, hi)`.
pub fn row_in_band(band: Band, row: usize, n_rows: usize) -> bool {
    let frac = row as f64 / n_rows as f64;
    frac >= band.0 && frac < band.1
}

/// Maps every attribute to one region and every region to its band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMap {
    pub attr_to_region: BTreeMap<String, Region>,
    pub bands: BTreeMap<Region, Band>,
}

/// Even anthropometric split: head 0.2, upper 0.3, lower 0.3, foot 0.2.
pub fn default_bands() -> BTreeMap<Region, Band> {
    let mut bands = BTreeMap::new();
    bands.insert(Region::Body, (0.0, 1.0));
    bands.insert(Region::Head, (0.0, 0.2));
    bands.insert(Region::Upper, (0.2, 0.5));
    bands.insert(Region::Lower, (0.5, 0.8));
    bands.insert(Region::Foot, (0.8, 1.0));
    bands
}

impl RegionMap {
    pub fn new(
        attr_to_region: BTreeMap<String, Region>,
        bands: BTreeMap<Region, Band>,
    ) -> Result<Self, DataError> {
        let map = RegionMap {
            attr_to_region,
            bands,
        };
        map.validate()?;
        Ok(map)
    }

    /// Non-regional mode: everything maps to `body` (bands defaulted).
    pub fn non_regional(attrs: &[String]) -> Self {
        RegionMap {
            attr_to_region: attrs
                .iter()
                .map(|a| (a.clone(), Region::Body))
                .collect(),
            bands: default_bands(),
        }
    }

    pub fn region_of(&self, attr: &str) -> Option<Region> {
        self.attr_to_region.get(attr).copied()
    }

    /// True when any attribute lives outside the body region.
    pub fn is_regional(&self) -> bool {
        self.attr_to_region.values().any(|r| *r != Region::Body)
    }

    pub fn band(&self, region: Region) -> Band {
        self.bands[&region]
    }

    fn validate(&self) -> Result<(), DataError> {
        for region in Region::ALL {
            if !self.bands.contains_key(&region) {
                return Err(DataError::Invalid(format!("missing band for region {region}")));
            }
        }
        let body = self.bands[&Region::Body];
        if body != (0.0, 1.0) {
            return Err(DataError::Invalid(format!(
                "body band must be [0, 1), got [{}, {})",
                body.0, body.1
            )));
        }
        let mut prev_hi = 0.0;
        for region in Region::NON_BODY {
            let (lo, hi) = self.bands[&region];
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
                return Err(DataError::Invalid(format!(
                    "band for {region} must satisfy 0 <= lo < hi <= 1, got [{lo}, {hi})"
                )));
            }
            if lo < prev_hi {
                return Err(DataError::Invalid(format!(
                    "band for {region} starting at {lo} overlaps previous band ending at {prev_hi}"
                )));
            }
            prev_hi = hi;
        }
        Ok(())
    }

    /// Check that every listed attribute is mapped.
    pub fn validate_against(&self, attr_names: &[String]) -> Result<(), DataError> {
        let missing: Vec<&String> = attr_names
            .iter()
            .filter(|a| !self.attr_to_region.contains_key(*a))
            .collect();
        if !missing.is_empty() {
            return Err(DataError::Invalid(format!(
                "attributes missing from region map: {}",
                missing
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }
        Ok(())
    }
}

pub fn load_region_map(path: &Path) -> Result<RegionMap, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let raw: RegionMap =
        serde_json::from_str(&text).map_err(|e| DataError::Invalid(format!("region map: {e}")))?;
    raw.validate()?;
    Ok(raw)
}

pub fn save_region_map(map: &RegionMap, path: &Path) -> Result<(), DataError> {
    let text = serde_json::to_string_pretty(map)
        .map_err(|e| DataError::Invalid(format!("region map: {e}")))?;
    std::fs::write(path, text).map_err(|e| DataError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attrs(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn default_bands_accepted() {
        let mut map = BTreeMap::new();
        map.insert("hat".to_string(), Region::Head);
        map.insert("boots".to_string(), Region::Foot);
        let rm = RegionMap::new(map, default_bands()).unwrap();
        assert!(rm.is_regional());
        assert_eq!(rm.region_of("hat"), Some(Region::Head));
    }

    #[test]
    fn all_body_is_valid_non_regional_mode() {
        let rm = RegionMap::non_regional(&attrs(&["a", "b"]));
        assert!(!rm.is_regional());
        assert_eq!(rm.region_of("a"), Some(Region::Body));
    }

    #[test]
    fn overlapping_bands_rejected() {
        let mut bands = default_bands();
        bands.insert(Region::Head, (0.0, 0.5));
        bands.insert(Region::Upper, (0.4, 0.8));
        bands.insert(Region::Lower, (0.8, 0.9));
        bands.insert(Region::Foot, (0.9, 1.0));
        let mut map = BTreeMap::new();
        map.insert("x".to_string(), Region::Head);
        let err = RegionMap::new(map, bands).unwrap_err();
        assert!(err.to_string().contains("overlaps"));
    }

    #[test]
    fn missing_attribute_listed() {
        let rm = RegionMap::non_regional(&attrs(&["a"]));
        let err = rm.validate_against(&attrs(&["a", "b", "c"])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("b") && msg.contains("c"), "{msg}");
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("regions.json");
        let mut map = BTreeMap::new();
        map.insert("hat".to_string(), Region::Head);
        map.insert("skirt".to_string(), Region::Lower);
        let rm = RegionMap::new(map, default_bands()).unwrap();
        save_region_map(&rm, &path).unwrap();
        assert_eq!(load_region_map(&path).unwrap(), rm);
    }

    #[test]
    fn unknown_region_name_rejected() {
        let json = r#"{"attr_to_region": {"hat": "torso"}, "bands": {}}"#;
        assert!(serde_json::from_str::<RegionMap>(json).is_err());
    }
}
