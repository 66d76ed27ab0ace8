//! Line-oriented dataset manifests.
//!
//! ```text
//! # side=64
//! # num_classes=6
//! # classes=background,organ0-left,organ0-right,...
//! images/s000_00.png	labels/s000_00.png	s000	0
//! ```
//!
//! Header lines start with `#`; every other non-empty line holds four
//! tab-separated columns: image path, label path, series id, slice index.
//! Paths are relative to the manifest's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::io::{read_image, read_labels};
use super::Sample;
use crate::error::{Error, Result};
use crate::tensor::IGNORE_LABEL;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub image: PathBuf,
    pub label: PathBuf,
    pub series: String,
    pub slice: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    /// Directory that relative entry paths are resolved against.
    pub root: PathBuf,
    pub side: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub entries: Vec<Entry>,
}

fn header_value<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let rest = line.strip_prefix('#')?.trim_start();
    rest.strip_prefix(key)?.trim_start().strip_prefix('=').map(str::trim)
}

impl Manifest {
    pub fn parse(text: &str, root: PathBuf, origin: &Path) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::decode(origin, format!("line {line}: {msg}"));
        let (mut side, mut num_classes, mut class_names) = (None, None, Vec::new());
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if line.starts_with('#') {
                if let Some(v) = header_value(line, "side") {
                    side = Some(v.parse().map_err(|_| bad(i + 1, format!("bad side {v:?}")))?);
                } else if let Some(v) = header_value(line, "num_classes") {
                    num_classes = Some(v.parse().map_err(|_| bad(i + 1, format!("bad num_classes {v:?}")))?);
                } else if let Some(v) = header_value(line, "classes") {
                    class_names = v.split(',').map(|s| s.trim().to_string()).collect();
                }
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(bad(i + 1, format!("expected 4 tab-separated columns, found {}", cols.len())));
            }
            let slice = cols[3]
                .trim()
                .parse()
                .map_err(|_| bad(i + 1, format!("bad slice index {:?}", cols[3])))?;
            entries.push(Entry {
                image: PathBuf::from(cols[0]),
                label: PathBuf::from(cols[1]),
                series: cols[2].to_string(),
                slice,
            });
        }
        let side = side.ok_or_else(|| Error::decode(origin, "missing '# side=' header"))?;
        let num_classes: usize = num_classes.ok_or_else(|| Error::decode(origin, "missing '# num_classes=' header"))?;
        if !class_names.is_empty() && class_names.len() != num_classes {
            return Err(Error::decode(
                origin,
                format!("{} class names for {num_classes} classes", class_names.len()),
            ));
        }
        Ok(Manifest {
            root,
            side,
            num_classes,
            class_names,
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::parse(&text, root, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# side={}\n# num_classes={}\n", self.side, self.num_classes);
        if !self.class_names.is_empty() {
            let _ = writeln!(out, "# classes={}", self.class_names.join(","));
        }
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                e.image.display(),
                e.label.display(),
                e.series,
                e.slice
            );
        }
        out
    }

    /// Write to `path`; entry paths are stored as given, relative to the file's directory.
    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }

    pub fn series_ids(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.series.as_str()).collect()
    }

    /// Load one entry, checking dims and label range.
    pub fn load_entry(&self, e: &Entry) -> Result<Sample> {
        let image = read_image(&self.resolve(&e.image))?;
        let labels = read_labels(&self.resolve(&e.label))?;
        let d = image.dims();
        if (d.h, d.w) != (self.side, self.side) {
            return Err(Error::Data(format!(
                "{} is {}x{}, manifest side is {}",
                e.image.display(),
                d.h,
                d.w,
                self.side
            )));
        }
        if (labels.height(), labels.width()) != (d.h, d.w) {
            return Err(Error::Data(format!(
                "label {} is {}x{} but image {} is {}x{}",
                e.label.display(),
                labels.height(),
                labels.width(),
                e.image.display(),
                d.h,
                d.w
            )));
        }
        if let Some(i) = labels
            .data()
            .iter()
            .position(|&v| v != IGNORE_LABEL && v as usize >= self.num_classes)
        {
            return Err(Error::Data(format!(
                "label {} has class {} at row {}, col {} (num_classes {})",
                e.label.display(),
                labels.data()[i],
                i / labels.width(),
                i % labels.width(),
                self.num_classes
            )));
        }
        Ok(Sample {
            image,
            labels,
            series: e.series.clone(),
            slice: e.slice,
        })
    }

    pub fn load(&self) -> Result<Vec<Sample>> {
        self.entries.iter().map(|e| self.load_entry(e)).collect()
    }

    /// Check every referenced file exists and decodes consistently.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_classes > 255 {
            return Err(Error::Data(format!("num_classes {} outside 1..=255", self.num_classes)));
        }
        for e in &self.entries {
            self.load_entry(e)?;
        }
        Ok(())
    }

    fn subset(&self, keep: &BTreeSet<String>) -> Manifest {
        Manifest {
            entries: self.entries.iter().filter(|e| keep.contains(&e.series)).cloned().collect(),
            ..self.clone()
        }
    }

    /// Partition whole series into train/val/test with a seeded shuffle.
    /// `val` and `test` are series counts.
    pub fn split_by_series(&self, val: usize, test: usize, seed: u64) -> Result<Split> {
        let mut ids: Vec<String> = self.series_ids().into_iter().map(String::from).collect();
        if val + test >= ids.len() {
            return Err(Error::Argument(format!(
                "cannot hold out {val} + {test} of {} series and keep any for training",
                ids.len()
            )));
        }
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let test_ids: BTreeSet<String> = ids[..test].iter().cloned().collect();
        let val_ids: BTreeSet<String> = ids[test..test + val].iter().cloned().collect();
        let train_ids: BTreeSet<String> = ids[test + val..].iter().cloned().collect();
        let split = Split {
            train: self.subset(&train_ids),
            val: self.subset(&val_ids),
            test: self.subset(&test_ids),
        };
        split.assert_disjoint()?;
        Ok(split)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Manifest,
    pub val: Manifest,
    pub test: Manifest,
}

impl Split {
    /// No series may appear in more than one part.
    pub fn assert_disjoint(&self) -> Result<()> {
        let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
        for (name, part) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for id in part.series_ids() {
                if let Some(prev) = owner.insert(id, name) {
                    if prev != name {
                        return Err(Error::Data(format!("series {id} appears in both {prev} and {name}")));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(series: &[&str]) -> Manifest {
        Manifest {
            root: PathBuf::new(),
            side: 8,
            num_classes: 3,
            class_names: vec!["a".into(), "b".into(), "c".into()],
            entries: series
                .iter()
                .enumerate()
                .map(|(i, s)| Entry {
                    image: format!("i{i}.png").into(),
                    label: format!("l{i}.png").into(),
                    series: s.to_string(),
                    slice: i as u32,
                })
                .collect(),
        }
    }

    #[test]
    fn text_round_trip() {
        let m = manifest(&["s0", "s0", "s1"]);
        let back = Manifest::parse(&m.to_text(), PathBuf::new(), Path::new("m.txt")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = Manifest::parse("# side=8\n# num_classes=2\na\tb\tc\n", PathBuf::new(), Path::new("m.txt")).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(Manifest::parse("# num_classes=2\n", PathBuf::new(), Path::new("m")).is_err());
    }

    #[test]
    fn split_keeps_series_whole() {
        let m = manifest(&["a", "a", "b", "c", "c", "c", "d", "e"]);
        let s = m.split_by_series(1, 2, 3).unwrap();
        assert_eq!(s.val.series_ids().len(), 1);
        assert_eq!(s.test.series_ids().len(), 2);
        assert_eq!(s.train.entries.len() + s.val.entries.len() + s.test.entries.len(), 8);
        assert!(s.assert_disjoint().is_ok());
        assert_eq!(s, m.split_by_series(1, 2, 3).unwrap());
        assert!(m.split_by_series(3, 2, 0).is_err());
    }

    #[test]
    fn overlapping_split_detected() {
        let m = manifest(&["a", "b"]);
        let s = Split {
            train: m.clone(),
            val: manifest(&["b"]),
            test: manifest(&[]),
        };
        assert!(matches!(s.assert_disjoint(), Err(Error::Data(msg)) if msg.contains("series b")));
    }
}
