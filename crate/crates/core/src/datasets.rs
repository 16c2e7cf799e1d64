//! Registry of the five public retinography datasets, their canonical
//! train/test splits, and combined-dataset composition.
//!
//! Splits are resolved from a directory listing laid out as each dataset is
//! distributed. Filenames are matched with per-dataset regular expressions;
//! the capture groups feed the templates that locate ground truth, the
//! optional second annotation and the optional field-of-view mask.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::error::{Error, Result};

const SPLITS_JSON: &str = include_str!("../data/splits.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// Split given by the distribution's own `training/` and `test/` folders.
    ByFolder,
    /// First `k` images in sorted order train, the last `m` test.
    FirstKLastM { k: usize, m: usize },
    /// Images numbered `01..=k` in every category train.
    FirstPerCategory { k: usize },
    /// Shipped index lists into the sorted image listing.
    IndexList,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FileConventions {
    /// Regex over the `/`-separated path relative to the dataset root.
    pub image: &'static str,
    /// Template (regex expansion syntax) producing the sample id.
    pub id: &'static str,
    pub gt: &'static str,
    pub gt2: Option<&'static str>,
    pub mask: Option<&'static str>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSpec {
    pub name: &'static str,
    pub height: usize,
    pub width: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub split_rule: SplitRule,
    pub conventions: FileConventions,
}

impl DatasetSpec {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn n_images(&self) -> usize {
        self.n_train + self.n_test
    }
}

pub static REGISTRY: [DatasetSpec; 5] = [
    DatasetSpec {
        name: "DRIVE",
        height: 584,
        width: 565,
        n_train: 20,
        n_test: 20,
        split_rule: SplitRule::ByFolder,
        conventions: FileConventions {
            image: r"^(?P<folder>training|test)/images/(?P<num>\d{2})_(?:training|test)\.(?i:tiff?)$",
            id: "${num}_${folder}",
            gt: "${folder}/1st_manual/${num}_manual1.gif",
            gt2: Some("${folder}/2nd_manual/${num}_manual2.gif"),
            mask: Some("${folder}/mask/${num}_${folder}_mask.gif"),
        },
    },
    DatasetSpec {
        name: "STARE",
        height: 605,
        width: 700,
        n_train: 10,
        n_test: 10,
        split_rule: SplitRule::IndexList,
        conventions: FileConventions {
            image: r"^stare-images/(?P<id>im\d{4})\.(?i:ppm)$",
            id: "${id}",
            gt: "labels-ah/${id}.ah.ppm",
            gt2: Some("labels-vk/${id}.vk.ppm"),
            mask: None,
        },
    },
    DatasetSpec {
        name: "CHASE_DB1",
        height: 960,
        width: 999,
        n_train: 8,
        n_test: 20,
        split_rule: SplitRule::FirstKLastM { k: 8, m: 20 },
        conventions: FileConventions {
            image: r"^(?P<id>Image_\d{2}[LR])\.(?i:jpe?g)$",
            id: "${id}",
            gt: "${id}_1stHO.png",
            gt2: Some("${id}_2ndHO.png"),
            mask: None,
        },
    },
    DatasetSpec {
        name: "IOSTAR",
        height: 1024,
        width: 1024,
        n_train: 20,
        n_test: 10,
        split_rule: SplitRule::IndexList,
        conventions: FileConventions {
            image: r"^image/(?P<id>STAR \d{2}_O[DS][CN])\.(?i:jpe?g)$",
            id: "${id}",
            gt: "GT/${id}_GT.tif",
            gt2: None,
            mask: Some("mask/${id}_Mask.tif"),
        },
    },
    DatasetSpec {
        name: "HRF",
        height: 2336,
        width: 3504,
        n_train: 15,
        n_test: 30,
        split_rule: SplitRule::FirstPerCategory { k: 5 },
        conventions: FileConventions {
            image: r"^images/(?P<id>(?P<num>\d{2})_(?P<cat>h|g|dr))\.(?i:jpe?g)$",
            id: "${id}",
            gt: "manual1/${id}.tif",
            gt2: None,
            mask: Some("mask/${id}_mask.tif"),
        },
    },
];

pub fn lookup(name: &str) -> Result<&'static DatasetSpec> {
    REGISTRY
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::UnknownDataset(name.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplePair {
    pub id: String,
    pub split: Split,
    pub image: PathBuf,
    pub gt: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt2: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset: String,
    pub samples: Vec<SamplePair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_rule: Option<SplitRule>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &SamplePair> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Ids must be unique; registered datasets must also match their
    /// canonical split sizes.
    pub fn validate(&self) -> Result<()> {
        self.validate_ids()?;
        if let Ok(spec) = lookup(&self.dataset) {
            let (train, test) = (self.count(Split::Train), self.count(Split::Test));
            if (train, test) != (spec.n_train, spec.n_test) {
                return Err(self.split_error(format!(
                    "split sizes {train}/{test} differ from {}/{}",
                    spec.n_train, spec.n_test
                )));
            }
        }
        Ok(())
    }

    fn validate_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                return Err(self.split_error(format!("duplicate sample id {:?}", s.id)));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m = Self::load_subset(path)?;
        m.validate()?;
        Ok(m)
    }

    /// Like [`Manifest::load`] but accepts any subset of a registered
    /// dataset; only id uniqueness is checked.
    pub fn load_subset(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        m.validate_ids()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    fn split_error(&self, reason: String) -> Error {
        Error::Split {
            dataset: self.dataset.clone(),
            reason,
        }
    }
}

#[derive(Debug, Deserialize)]
struct SplitFile {
    splits: BTreeMap<String, IndexSplit>,
}

#[derive(Debug, Deserialize)]
struct IndexSplit {
    train: Vec<usize>,
    test: Vec<usize>,
}

fn shipped_index_split(dataset: &str) -> Result<IndexSplit> {
    let mut file: SplitFile = serde_json::from_str(SPLITS_JSON)?;
    file.splits.remove(dataset).ok_or_else(|| Error::Split {
        dataset: dataset.to_string(),
        reason: "no shipped index list".into(),
    })
}

/// Walks `root` and resolves the dataset's canonical split from what it finds.
pub fn resolve_split(spec: &DatasetSpec, root: &Path) -> Result<Manifest> {
    let mut listing = Vec::new();
    for entry in WalkDir::new(root) {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            Error::io(path, e.into())
        })?;
        if entry.file_type().is_file() {
            let rel = entry.path().strip_prefix(root).expect("walkdir yields children");
            let parts: Vec<_> = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect();
            listing.push(parts.join("/"));
        }
    }
    resolve_listing(spec, root, &listing)
}

struct Found {
    id: String,
    rel: String,
    gt: String,
    gt2: Option<String>,
    mask: Option<String>,
    folder: Option<String>,
    number: Option<usize>,
}

/// Resolves a split from an explicit listing of `/`-separated paths relative
/// to `root`. The result is independent of listing order.
pub fn resolve_listing(spec: &DatasetSpec, root: &Path, listing: &[String]) -> Result<Manifest> {
    let fail = |reason: String| Error::Split {
        dataset: spec.name.to_string(),
        reason,
    };
    let conv = &spec.conventions;
    let re = Regex::new(conv.image).expect("registry patterns compile");
    let present: HashSet<&str> = listing.iter().map(String::as_str).collect();

    let mut found: Vec<Found> = Vec::new();
    for rel in listing {
        let Some(caps) = re.captures(rel) else { continue };
        let expand = |template: &str| {
            let mut out = String::new();
            caps.expand(template, &mut out);
            out
        };
        found.push(Found {
            id: expand(conv.id),
            rel: rel.clone(),
            gt: expand(conv.gt),
            gt2: conv.gt2.map(expand),
            mask: conv.mask.map(expand),
            folder: caps.name("folder").map(|m| m.as_str().to_string()),
            number: caps.name("num").and_then(|m| m.as_str().parse().ok()),
        });
    }
    found.sort_by(|a, b| a.rel.cmp(&b.rel));

    let mut ids = HashSet::new();
    for f in &found {
        if !ids.insert(f.id.as_str()) {
            return Err(fail(format!("ambiguous filenames for sample {:?}", f.id)));
        }
    }
    if found.len() != spec.n_images() {
        return Err(fail(format!(
            "found {} images, expected {}",
            found.len(),
            spec.n_images()
        )));
    }

    let splits: Vec<Split> = match spec.split_rule {
        SplitRule::ByFolder => found
            .iter()
            .map(|f| match f.folder.as_deref() {
                Some("training") | Some("train") => Ok(Split::Train),
                Some("test") => Ok(Split::Test),
                other => Err(fail(format!("cannot infer split from folder {other:?}"))),
            })
            .collect::<Result<_>>()?,
        SplitRule::FirstKLastM { k, m } => {
            if k + m != found.len() {
                return Err(fail(format!("{k}+{m} does not cover {} images", found.len())));
            }
            (0..found.len())
                .map(|i| if i < k { Split::Train } else { Split::Test })
                .collect()
        }
        SplitRule::FirstPerCategory { k } => found
            .iter()
            .map(|f| match f.number {
                Some(n) if (1..=k).contains(&n) => Ok(Split::Train),
                Some(_) => Ok(Split::Test),
                None => Err(fail(format!("no image number in {:?}", f.rel))),
            })
            .collect::<Result<_>>()?,
        SplitRule::IndexList => {
            let lists = shipped_index_split(spec.name)?;
            let mut splits = vec![None; found.len()];
            for (list, split) in [(&lists.train, Split::Train), (&lists.test, Split::Test)] {
                for &i in list {
                    match splits.get_mut(i) {
                        Some(slot @ None) => *slot = Some(split),
                        Some(Some(_)) => return Err(fail(format!("index {i} listed twice"))),
                        None => return Err(fail(format!("index {i} out of range"))),
                    }
                }
            }
            splits
                .into_iter()
                .enumerate()
                .map(|(i, s)| s.ok_or_else(|| fail(format!("index {i} in neither split"))))
                .collect::<Result<_>>()?
        }
    };

    let mut samples = Vec::with_capacity(found.len());
    for wanted in [Split::Train, Split::Test] {
        for (f, &split) in found.iter().zip(&splits) {
            if split != wanted {
                continue;
            }
            if !present.contains(f.gt.as_str()) {
                return Err(fail(format!("missing ground truth {:?} for {:?}", f.gt, f.id)));
            }
            let optional = |p: &Option<String>| {
                p.as_ref()
                    .filter(|p| present.contains(p.as_str()))
                    .map(|p| root.join(p))
            };
            samples.push(SamplePair {
                id: f.id.clone(),
                split,
                image: root.join(&f.rel),
                gt: root.join(&f.gt),
                gt2: optional(&f.gt2),
                mask: optional(&f.mask),
            });
        }
    }

    let manifest = Manifest {
        dataset: spec.name.to_string(),
        samples,
        split_rule: Some(spec.split_rule),
    };
    manifest.validate()?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovdMode {
    CovdMinus,
    CovdMinusSsl,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSample {
    /// Registry name of the dataset the sample comes from.
    pub source: String,
    #[serde(flatten)]
    pub sample: SamplePair,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlabeledSample {
    pub source: String,
    pub id: String,
    pub image: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombinedManifest {
    pub target: String,
    pub mode: CovdMode,
    pub labeled: Vec<LabeledSample>,
    #[serde(default)]
    pub unlabeled: Vec<UnlabeledSample>,
}

impl CombinedManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("combined manifest serializes")
    }
}

/// Builds the combined training set for `target`: train splits of every other
/// registered dataset, plus (SSL mode) the target's train images without
/// their ground truth.
pub fn compose_covd(target: &str, mode: CovdMode, manifests: &[Manifest]) -> Result<CombinedManifest> {
    let target_spec = lookup(target)?;
    let by_name = |name: &str| {
        manifests.iter().find(|m| m.dataset == name).ok_or_else(|| Error::Split {
            dataset: name.to_string(),
            reason: "no resolved manifest supplied".into(),
        })
    };

    let mut labeled = Vec::new();
    for spec in REGISTRY.iter().filter(|s| s.name != target_spec.name) {
        for sample in by_name(spec.name)?.split(Split::Train) {
            labeled.push(LabeledSample {
                source: spec.name.to_string(),
                sample: sample.clone(),
            });
        }
    }

    let unlabeled = match mode {
        CovdMode::CovdMinus => Vec::new(),
        CovdMode::CovdMinusSsl => {
            let u: Vec<_> = by_name(target_spec.name)?
                .split(Split::Train)
                .map(|s| UnlabeledSample {
                    source: target_spec.name.to_string(),
                    id: s.id.clone(),
                    image: s.image.clone(),
                })
                .collect();
            if u.is_empty() {
                return Err(Error::invalid(format!("{target} has no training images for SSL")));
            }
            u
        }
    };

    Ok(CombinedManifest {
        target: target_spec.name.to_string(),
        mode,
        labeled,
        unlabeled,
    })
}

/// Relative paths of a complete, empty-file distribution of `spec`, laid out
/// the way [`resolve_split`] expects. Used to build fixtures.
pub fn synthetic_layout(spec: &DatasetSpec) -> Vec<String> {
    let mut files = Vec::new();
    let mut push_stem = |stem_files: &[String]| files.extend_from_slice(stem_files);
    match spec.name {
        "DRIVE" => {
            for (folder, range, with_gt2) in [("training", 21..=40, false), ("test", 1..=20, true)] {
                for n in range {
                    let mut v = vec![
                        format!("{folder}/images/{n:02}_{folder}.tif"),
                        format!("{folder}/1st_manual/{n:02}_manual1.gif"),
                        format!("{folder}/mask/{n:02}_{folder}_mask.gif"),
                    ];
                    if with_gt2 {
                        v.push(format!("{folder}/2nd_manual/{n:02}_manual2.gif"));
                    }
                    push_stem(&v);
                }
            }
        }
        "STARE" => {
            for n in [1, 2, 3, 4, 5, 44, 77, 81, 82, 139, 162, 163, 235, 236, 239, 240, 255, 291, 319, 324] {
                push_stem(&[
                    format!("stare-images/im{n:04}.ppm"),
                    format!("labels-ah/im{n:04}.ah.ppm"),
                    format!("labels-vk/im{n:04}.vk.ppm"),
                ]);
            }
        }
        "CHASE_DB1" => {
            for n in 1..=14 {
                for eye in ["L", "R"] {
                    push_stem(&[
                        format!("Image_{n:02}{eye}.jpg"),
                        format!("Image_{n:02}{eye}_1stHO.png"),
                        format!("Image_{n:02}{eye}_2ndHO.png"),
                    ]);
                }
            }
        }
        "IOSTAR" => {
            let kinds = ["ODC", "ODN", "OSC", "OSN"];
            for n in 1..=30 {
                let id = format!("STAR {n:02}_{}", kinds[n % 4]);
                push_stem(&[
                    format!("image/{id}.jpg"),
                    format!("GT/{id}_GT.tif"),
                    format!("mask/{id}_Mask.tif"),
                ]);
            }
        }
        "HRF" => {
            for cat in ["dr", "g", "h"] {
                for n in 1..=15 {
                    push_stem(&[
                        format!("images/{n:02}_{cat}.jpg"),
                        format!("manual1/{n:02}_{cat}.tif"),
                        format!("mask/{n:02}_{cat}_mask.tif"),
                    ]);
                }
            }
        }
        _ => {}
    }
    files
}
