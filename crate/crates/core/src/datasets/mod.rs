//! Image-folder ingestion and synthetic datasets.
//!
//! A dataset directory is either
//! * class-named subdirectories of PNG/PPM/PGM files, or
//! * a flat directory with a `labels.csv` (`path,label` header), optionally
//!   next to a `classes.txt` listing the allowed class names one per line.
//!
//! Images decode to `[0,1]` RGB and are Lanczos-resized to the target side on
//! access when their native size differs.

pub mod synth;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::augment::lanczos_resize;
use crate::error::{ensure, Error, Result};
use crate::image::Image;

pub use synth::{synth_dataset, SynthKind};

/// Largest tolerated fraction of unreadable files.
pub const MAX_FAILURE_RATE: f64 = 0.01;
const EXTENSIONS: [&str; 4] = ["png", "ppm", "pgm", "pnm"];

/// Random access to a labeled or unlabeled image collection.
pub trait ImageSource: Send + Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Decoded RGB image at the dataset's target size.
    fn get(&self, index: usize) -> Result<Image>;

    fn label(&self, index: usize) -> Option<usize>;

    fn class_names(&self) -> &[String];

    fn num_classes(&self) -> usize {
        self.class_names().len()
    }

    /// Every label, or an error if any entry is unlabeled.
    fn labels(&self) -> Result<Vec<usize>> {
        (0..self.len())
            .map(|i| {
                self.label(i)
                    .ok_or_else(|| Error::Dataset(format!("entry {i} has no label")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    /// Side every accessed image is resized to; `None` keeps native sizes.
    pub target_size: Option<usize>,
    pub classes: Vec<String>,
}

/// Files that could not be decoded during loading.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub scanned: usize,
    pub failures: Vec<(PathBuf, String)>,
}

impl LoadReport {
    pub fn failure_rate(&self) -> f64 {
        if self.scanned == 0 {
            0.0
        } else {
            self.failures.len() as f64 / self.scanned as f64
        }
    }

    /// Plain-text rendering.
    pub fn render(&self) -> String {
        let mut s = format!(
            "scanned {} files, {} unreadable\n",
            self.scanned,
            self.failures.len()
        );
        for (p, why) in &self.failures {
            s.push_str(&format!("{}\t{}\n", p.display(), why));
        }
        s
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

fn probe(path: &Path) -> std::result::Result<(), String> {
    ::image::ImageReader::open(path)
        .map_err(|e| e.to_string())?
        .with_guessed_format()
        .map_err(|e| e.to_string())?
        .into_dimensions()
        .map(|_| ())
        .map_err(|e| e.to_string())
}

fn read_labels_csv(root: &Path) -> Result<(Vec<(PathBuf, String)>, Option<Vec<String>>)> {
    let csv_path = root.join("labels.csv");
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(&csv_path)
        .map_err(|e| Error::Dataset(format!("{}: {e}", csv_path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Dataset(format!("{}: {e}", csv_path.display())))?
        .clone();
    if headers.len() != 2 || &headers[0] != "path" || &headers[1] != "label" {
        return Err(Error::Dataset(format!(
            "{}: header must be `path,label`",
            csv_path.display()
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Dataset(format!("{} row {}: {e}", csv_path.display(), i + 2)))?;
        rows.push((root.join(&rec[0]), rec[1].to_string()));
    }
    let declared = root.join("classes.txt");
    let classes = if declared.exists() {
        let text = fs::read_to_string(&declared).map_err(|e| Error::io(&declared, e))?;
        Some(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
    } else {
        None
    };
    Ok((rows, classes))
}

/// Scans `dir`, checks that every file decodes, and returns the manifest.
/// Aborts when more than 1% of the files are unreadable.
pub fn load_dataset(dir: &Path, target_size: Option<usize>) -> Result<(FolderDataset, LoadReport)> {
    ensure!(target_size != Some(0), "target size must be positive");
    ensure!(dir.is_dir(), "{} is not a directory", dir.display());
    let mut entries = Vec::new();
    let classes: Vec<String>;
    if dir.join("labels.csv").exists() {
        let (rows, declared) = read_labels_csv(dir)?;
        classes = match declared {
            Some(c) => {
                for (i, (_, label)) in rows.iter().enumerate() {
                    if !c.contains(label) {
                        return Err(Error::Dataset(format!(
                            "labels.csv row {} ({}): unknown class `{label}`",
                            i + 2,
                            rows[i].0.display()
                        )));
                    }
                }
                c
            }
            None => rows.iter().map(|(_, l)| l.clone()).collect::<BTreeSet<_>>().into_iter().collect(),
        };
        let mut rows = rows;
        rows.sort();
        for (path, label) in rows {
            let idx = classes.iter().position(|c| *c == label);
            entries.push(ManifestEntry { path, label: idx });
        }
    } else {
        let listing = sorted_dir(dir)?;
        let subdirs: Vec<&PathBuf> = listing.iter().filter(|p| p.is_dir()).collect();
        if subdirs.is_empty() {
            classes = Vec::new();
            entries.extend(listing.iter().filter(|p| is_image(p)).map(|p| ManifestEntry {
                path: p.clone(),
                label: None,
            }));
        } else {
            classes = subdirs
                .iter()
                .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
                .collect();
            for (ci, sub) in subdirs.iter().enumerate() {
                for p in sorted_dir(sub)?.into_iter().filter(|p| is_image(p)) {
                    entries.push(ManifestEntry { path: p, label: Some(ci) });
                }
            }
        }
    }

    let mut report = LoadReport {
        scanned: entries.len(),
        failures: Vec::new(),
    };
    entries.retain(|e| match probe(&e.path) {
        Ok(()) => true,
        Err(why) => {
            report.failures.push((e.path.clone(), why));
            false
        }
    });
    if report.scanned == 0 {
        log::warn!("dataset {} is empty", dir.display());
    }
    if report.failure_rate() > MAX_FAILURE_RATE {
        return Err(Error::Dataset(format!(
            "{} of {} files unreadable (limit {:.0}%):\n{}",
            report.failures.len(),
            report.scanned,
            MAX_FAILURE_RATE * 100.0,
            report.render()
        )));
    }
    let manifest = DatasetManifest {
        root: dir.to_path_buf(),
        entries,
        target_size,
        classes,
    };
    Ok((FolderDataset { manifest }, report))
}

/// Lazily decoded image folder.
#[derive(Debug, Clone)]
pub struct FolderDataset {
    pub manifest: DatasetManifest,
}

impl ImageSource for FolderDataset {
    fn len(&self) -> usize {
        self.manifest.entries.len()
    }

    fn get(&self, index: usize) -> Result<Image> {
        let entry = self
            .manifest
            .entries
            .get(index)
            .ok_or_else(|| Error::Contract(format!("index {index} outside dataset of {}", self.len())))?;
        let img = Image::load(&entry.path)?.to_rgb()?;
        match self.manifest.target_size {
            Some(s) if (img.height(), img.width()) != (s, s) => lanczos_resize(&img, s, s),
            _ => Ok(img),
        }
    }

    fn label(&self, index: usize) -> Option<usize> {
        self.manifest.entries.get(index).and_then(|e| e.label)
    }

    fn class_names(&self) -> &[String] {
        &self.manifest.classes
    }
}

/// Fully decoded images held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct InMemoryDataset {
    pub images: Vec<Image>,
    pub labels: Vec<Option<usize>>,
    pub classes: Vec<String>,
}

impl InMemoryDataset {
    pub fn new(images: Vec<Image>, labels: Vec<Option<usize>>, classes: Vec<String>) -> Result<Self> {
        ensure!(images.len() == labels.len(), "{} images but {} labels", images.len(), labels.len());
        ensure!(
            labels.iter().flatten().all(|&l| l < classes.len()),
            "label outside the {} declared classes",
            classes.len()
        );
        Ok(Self { images, labels, classes })
    }

    /// Writes the images as PNG files into class subdirectories.
    pub fn export(&self, dir: &Path) -> Result<()> {
        for (i, (img, label)) in self.images.iter().zip(&self.labels).enumerate() {
            let sub = match label {
                Some(l) => dir.join(&self.classes[*l]),
                None => dir.to_path_buf(),
            };
            fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            img.save_png(&sub.join(format!("{i:06}.png")))?;
        }
        Ok(())
    }
}

impl ImageSource for InMemoryDataset {
    fn len(&self) -> usize {
        self.images.len()
    }

    fn get(&self, index: usize) -> Result<Image> {
        self.images
            .get(index)
            .cloned()
            .ok_or_else(|| Error::Contract(format!("index {index} outside dataset of {}", self.images.len())))
    }

    fn label(&self, index: usize) -> Option<usize> {
        self.labels.get(index).copied().flatten()
    }

    fn class_names(&self) -> &[String] {
        &self.classes
    }
}
