use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sample {
    pub path: PathBuf,
    pub class_index: usize,
}

/// Class list plus labeled image paths. Class indices are positions in the
/// byte-wise sorted class-name list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
    pub source_root: PathBuf,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScanStats {
    pub skipped_files: usize,
}

pub fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| {
            let e = e.to_ascii_lowercase();
            IMAGE_EXTENSIONS.contains(&e.as_str())
        })
        .unwrap_or(false)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    // OsStr ordering is byte-wise on Unix.
    entries.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(entries)
}

/// Reads a `directory_name,canonical_name` CSV (with that header).
pub fn read_mapping(path: &Path) -> Result<HashMap<String, String>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::data(format!(
        "cannot read mapping file {}: {e}",
        path.display()
    )))?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["directory_name", "canonical_name"] {
        return Err(Error::data(format!(
            "mapping file {} must have header directory_name,canonical_name",
            path.display()
        )));
    }
    let mut map = HashMap::new();
    for rec in reader.records() {
        let rec = rec?;
        map.insert(rec[0].to_string(), rec[1].to_string());
    }
    Ok(map)
}

impl DatasetManifest {
    /// Scans `<root>/<class_name>/<image files>`. Classes and files are
    /// taken in byte order; files without a jpg/jpeg/png extension are
    /// skipped and counted. An optional mapping renames class directories
    /// (directories mapped to the same name are merged).
    pub fn scan(root: &Path, mapping: Option<&HashMap<String, String>>) -> Result<(Self, ScanStats)> {
        if !root.is_dir() {
            return Err(Error::data(format!("{} is not a directory", root.display())));
        }
        let mut stats = ScanStats::default();
        let mut by_class: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
        for dir in sorted_entries(root)? {
            if !dir.is_dir() {
                stats.skipped_files += 1;
                continue;
            }
            let dir_name = dir
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| Error::data(format!("class folder {} is not UTF-8", dir.display())))?
                .to_string();
            let mut images = Vec::new();
            for file in sorted_entries(&dir)? {
                if file.is_file() && is_image_file(&file) {
                    images.push(file);
                } else {
                    stats.skipped_files += 1;
                }
            }
            if images.is_empty() {
                return Err(Error::data(format!(
                    "class folder {} contains no images",
                    dir.display()
                )));
            }
            let name = mapping
                .and_then(|m| m.get(&dir_name).cloned())
                .unwrap_or(dir_name);
            by_class.entry(name).or_default().extend(images);
        }
        if by_class.is_empty() {
            return Err(Error::data(format!(
                "{} has no class folders",
                root.display()
            )));
        }
        let class_names: Vec<String> = by_class.keys().cloned().collect();
        let samples = by_class
            .into_values()
            .enumerate()
            .flat_map(|(class_index, paths)| {
                paths.into_iter().map(move |path| Sample { path, class_index })
            })
            .collect();
        if stats.skipped_files > 0 {
            log::info!(
                "skipped {} non-image entries under {}",
                stats.skipped_files,
                root.display()
            );
        }
        Ok((
            DatasetManifest {
                class_names,
                samples,
                source_root: root.to_path_buf(),
            },
            stats,
        ))
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for s in &self.samples {
            counts[s.class_index] += 1;
        }
        counts
    }

    /// Re-indexes samples against `class_names`, which must contain every
    /// class of this manifest.
    pub fn remap_to(&self, class_names: &[String]) -> Result<Self> {
        let index: HashMap<&str, usize> = class_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let missing: Vec<&str> = self
            .class_names
            .iter()
            .filter(|n| !index.contains_key(n.as_str()))
            .map(|n| n.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::data(format!(
                "classes not known to the model: {}",
                missing.join(", ")
            )));
        }
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                path: s.path.clone(),
                class_index: index[self.class_names[s.class_index].as_str()],
            })
            .collect();
        Ok(DatasetManifest {
            class_names: class_names.to_vec(),
            samples,
            source_root: self.source_root.clone(),
        })
    }

    /// `path,class_index,class_name` with LF line endings.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(["path", "class_index", "class_name"])?;
        for s in &self.samples {
            let path = s
                .path
                .to_str()
                .ok_or_else(|| Error::data(format!("path {} is not UTF-8", s.path.display())))?;
            w.write_record([
                path,
                &s.class_index.to_string(),
                &self.class_names[s.class_index],
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::invalid(format!("csv flush: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    /// Parses a manifest CSV. Class names are rebuilt from the
    /// `(class_index, class_name)` pairs and must be dense.
    pub fn from_csv(text: &str, source_root: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["path", "class_index", "class_name"] {
            return Err(Error::data("manifest header must be path,class_index,class_name"));
        }
        let mut names: BTreeMap<usize, String> = BTreeMap::new();
        let mut samples = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let idx: usize = rec[1]
                .parse()
                .map_err(|_| Error::data(format!("bad class index {:?}", &rec[1])))?;
            match names.get(&idx) {
                Some(n) if n != &rec[2] => {
                    return Err(Error::data(format!(
                        "class index {idx} named both {n:?} and {:?}",
                        &rec[2]
                    )))
                }
                _ => {
                    names.insert(idx, rec[2].to_string());
                }
            }
            samples.push(Sample {
                path: PathBuf::from(&rec[0]),
                class_index: idx,
            });
        }
        if names.keys().copied().ne(0..names.len()) {
            return Err(Error::data("manifest class indices are not dense"));
        }
        Ok(DatasetManifest {
            class_names: names.into_values().collect(),
            samples,
            source_root: source_root.to_path_buf(),
        })
    }
}
