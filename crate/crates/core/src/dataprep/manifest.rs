use std::collections::HashSet;
use std::path::Path;

use super::{join_dual, ClassMask, DualImage, Palette, RgbImage};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Synthetic,
}

/// One image/mask pair. Synthetic entries point both paths at the same dual
/// image, whose fourth channel holds the mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub role: Role,
    pub source: Source,
    pub image: String,
    pub mask: String,
    #[serde(default)]
    pub provenance: String,
}

impl ManifestEntry {
    /// Loads the entry as a dual image. Paths are resolved against `base`.
    /// A synthetic entry (or one whose image and mask paths coincide) is read
    /// as a stored dual image; a real pair is joined on the fly.
    pub fn load_dual(&self, base: &Path, palette: &Palette) -> Result<DualImage> {
        let image = base.join(&self.image);
        if self.source == Source::Synthetic || self.image == self.mask {
            return DualImage::load_png(&image);
        }
        let rgb = RgbImage::load_png(&image)?;
        let mask = ClassMask::load_png(&base.join(&self.mask), palette.clone())?;
        join_dual(&rgb, &mask)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub entries: Vec<ManifestEntry>,
    #[serde(default)]
    pub provenance: Vec<String>,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, entries: Vec<ManifestEntry>) -> Result<Self> {
        let manifest = DatasetManifest {
            name: name.into(),
            entries,
            provenance: Vec::new(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Test entries must be real and no image path may repeat within a role.
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashSet<(Role, &str)> = HashSet::new();
        for e in &self.entries {
            if e.role == Role::Test && e.source != Source::Real {
                return Err(Error::invalid(format!(
                    "test entry {} is synthetic; test data must be real",
                    e.name
                )));
            }
            if !seen.insert((e.role, e.image.as_str())) {
                return Err(Error::invalid(format!(
                    "image {} appears twice in the {:?} role",
                    e.image, e.role
                )));
            }
        }
        Ok(())
    }

    pub fn role(&self, role: Role) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.role == role)
    }

    pub fn count(&self, role: Role) -> usize {
        self.role(role).count()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact {
                    path: path.to_path_buf(),
                    what: "manifest not found".into(),
                }
            } else {
                Error::io(path, e)
            }
        })?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// `percent`% of `base`, rounded half up.
pub fn synthetic_count(base: usize, percent: u32) -> usize {
    (base * percent as usize + 50) / 100
}

fn draw_from_pool(pool: &[String], required: usize, seed: u64) -> Result<Vec<&String>> {
    let mut seen = HashSet::new();
    if let Some(dup) = pool.iter().find(|p| !seen.insert(p.as_str())) {
        return Err(Error::invalid(format!("synthetic pool lists {dup} twice")));
    }
    if pool.len() < required {
        return Err(Error::PoolTooSmall {
            required,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, pool.len(), required)
        .into_iter()
        .map(|i| &pool[i])
        .collect())
}

fn synthetic_entry(index: usize, path: &str, percent: u32, seed: u64) -> ManifestEntry {
    ManifestEntry {
        name: format!("synthetic_{index:04}"),
        role: Role::Train,
        source: Source::Synthetic,
        image: path.to_string(),
        mask: path.to_string(),
        provenance: format!("dual image drawn for {percent}% addition (seed {seed})"),
    }
}

/// Adds `percent`% of the base train count as synthetic train entries drawn
/// without replacement from `pool`. Validation and test roles are untouched.
pub fn compose_dataset(
    base: &DatasetManifest,
    pool: &[String],
    percent: u32,
    seed: u64,
) -> Result<DatasetManifest> {
    base.validate()?;
    let required = synthetic_count(base.count(Role::Train), percent);
    let drawn = draw_from_pool(pool, required, seed)?;
    let mut out = base.clone();
    out.name = format!("{} [{percent}%]", base.name);
    out.entries.extend(
        drawn
            .iter()
            .enumerate()
            .map(|(i, path)| synthetic_entry(i, path, percent, seed)),
    );
    out.provenance.push(format!(
        "compose percent={percent} seed={seed} base_train={} added={required}",
        base.count(Role::Train)
    ));
    out.validate()?;
    Ok(out)
}

/// A purely synthetic training set sized relative to `base_size`, with real
/// validation and test entries supplied by the caller.
pub fn compose_pure_synthetic(
    name: &str,
    base_size: usize,
    pool: &[String],
    percent: u32,
    validation: &[ManifestEntry],
    test: &[ManifestEntry],
    seed: u64,
) -> Result<DatasetManifest> {
    if base_size == 0 {
        return Err(Error::invalid("base size must be positive"));
    }
    for (entries, role) in [(validation, Role::Validation), (test, Role::Test)] {
        if let Some(e) = entries.iter().find(|e| e.source != Source::Real || e.role != role) {
            return Err(Error::invalid(format!(
                "entry {} must be a real {role:?} entry",
                e.name
            )));
        }
    }
    let required = synthetic_count(base_size, percent);
    let drawn = draw_from_pool(pool, required, seed)?;
    let mut entries: Vec<ManifestEntry> = drawn
        .iter()
        .enumerate()
        .map(|(i, path)| synthetic_entry(i, path, percent, seed))
        .collect();
    entries.extend_from_slice(validation);
    entries.extend_from_slice(test);
    let mut out = DatasetManifest::new(format!("{name} [{percent}%]"), entries)?;
    out.provenance.push(format!(
        "pure synthetic percent={percent} seed={seed} base_size={base_size} added={required}"
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn real(role: Role, i: usize) -> ManifestEntry {
        ManifestEntry {
            name: format!("{role:?}_{i}"),
            role,
            source: Source::Real,
            image: format!("{role:?}/{i}.png"),
            mask: format!("{role:?}/{i}_mask.png"),
            provenance: String::new(),
        }
    }

    fn base(train: usize) -> DatasetManifest {
        let mut entries: Vec<_> = (0..train).map(|i| real(Role::Train, i)).collect();
        entries.extend((0..5).map(|i| real(Role::Validation, i)));
        entries.extend((0..7).map(|i| real(Role::Test, i)));
        DatasetManifest::new("SHQ", entries).unwrap()
    }

    fn pool(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("synth/{i}.png")).collect()
    }

    #[test]
    fn fifty_percent_of_sixteen_is_eight() {
        let out = compose_dataset(&base(16), &pool(40), 50, 1).unwrap();
        assert_eq!(out.count(Role::Train), 24);
        assert_eq!(out.role(Role::Train).filter(|e| e.source == Source::Synthetic).count(), 8);
        assert_eq!(out.count(Role::Validation), 5);
        assert_eq!(out.count(Role::Test), 7);
    }

    #[test]
    fn three_hundred_percent_of_forty_eight() {
        let out = compose_dataset(&base(48), &pool(200), 300, 1).unwrap();
        assert_eq!(out.count(Role::Train), 48 + 144);
    }

    #[test]
    fn zero_percent_changes_only_provenance() {
        let b = base(16);
        let out = compose_dataset(&b, &pool(3), 0, 9).unwrap();
        assert_eq!(out.entries, b.entries);
        assert_eq!(out.provenance.len(), 1);
    }

    #[test]
    fn sweep_percents_are_exact_on_16_and_48() {
        for base_size in [16usize, 48] {
            for pct in [50u32, 75, 100, 150, 200, 250, 300] {
                assert_eq!((base_size * pct as usize) % 100, 0);
                assert_eq!(synthetic_count(base_size, pct) * 100, base_size * pct as usize);
            }
        }
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(synthetic_count(3, 50), 2);
        assert_eq!(synthetic_count(5, 10), 1);
        assert_eq!(synthetic_count(1, 49), 0);
    }

    #[test]
    fn pool_too_small_reports_counts() {
        let err = compose_dataset(&base(16), &pool(7), 50, 1).unwrap_err();
        assert!(matches!(err, Error::PoolTooSmall { required: 8, available: 7 }));
    }

    #[test]
    fn pure_synthetic_sizes() {
        let val: Vec<_> = (0..12).map(|i| real(Role::Validation, i)).collect();
        let test: Vec<_> = (0..27).map(|i| real(Role::Test, i)).collect();
        let out = compose_pure_synthetic("SyntLQ", 48, &pool(100), 50, &val, &test, 3).unwrap();
        assert_eq!(out.count(Role::Train), 24);
        assert!(out.role(Role::Train).all(|e| e.source == Source::Synthetic));
        assert_eq!(out.count(Role::Validation), 12);
        let out = compose_pure_synthetic("SyntLQ", 48, &pool(100), 100, &val, &test, 3).unwrap();
        assert_eq!(out.count(Role::Train), 48);
        let err = compose_pure_synthetic("SyntLQ", 48, &pool(23), 50, &val, &test, 3).unwrap_err();
        assert!(matches!(err, Error::PoolTooSmall { required: 24, available: 23 }));
    }

    #[test]
    fn deterministic_and_without_duplicates() {
        let b = base(48);
        let a = compose_dataset(&b, &pool(150), 300, 42).unwrap();
        assert_eq!(a, compose_dataset(&b, &pool(150), 300, 42).unwrap());
        let mut paths: Vec<_> = a.role(Role::Train).map(|e| e.image.clone()).collect();
        let n = paths.len();
        paths.sort();
        paths.dedup();
        assert_eq!(paths.len(), n);
        assert_ne!(a, compose_dataset(&b, &pool(150), 300, 43).unwrap());
    }

    #[test]
    fn synthetic_test_entries_rejected() {
        let mut e = real(Role::Test, 0);
        e.source = Source::Synthetic;
        assert!(DatasetManifest::new("x", vec![e]).is_err());
    }

    #[test]
    fn duplicate_path_within_role_rejected() {
        let e = real(Role::Train, 0);
        assert!(DatasetManifest::new("x", vec![e.clone(), e.clone()]).is_err());
        let mut v = e.clone();
        v.role = Role::Validation;
        assert!(DatasetManifest::new("x", vec![e, v]).is_ok());
    }

    #[test]
    fn json_field_names() {
        let json = serde_json::to_value(real(Role::Validation, 1)).unwrap();
        assert_eq!(json["role"], "validation");
        assert_eq!(json["source"], "real");
        assert!(json.get("image").is_some() && json.get("mask").is_some());
        assert!(json.get("provenance").is_some());
    }
}
