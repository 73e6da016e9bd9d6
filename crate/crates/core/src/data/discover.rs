use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use super::sample::Label;
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

/// One image and every mask file that belongs to it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pair {
    pub image: PathBuf,
    pub masks: Vec<PathBuf>,
    pub label: Label,
}

impl Pair {
    /// File stem of the image, used as the sample's name.
    pub fn stem(&self) -> String {
        self.image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reject {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Discovery {
    pub pairs: Vec<Pair>,
    pub rejects: Vec<Reject>,
}

impl Discovery {
    /// Plain-text rejects report, one `path: reason` line each.
    pub fn rejects_report(&self) -> String {
        let mut s = String::new();
        for r in &self.rejects {
            let _ = writeln!(s, "{}: {}", r.path.display(), r.reason);
        }
        s
    }
}

/// Splits `"x_mask"` / `"x_mask_3"` into `"x"`.
fn mask_base(stem: &str) -> Option<&str> {
    if let Some(base) = stem.strip_suffix("_mask") {
        return Some(base);
    }
    let (head, tail) = stem.rsplit_once('_')?;
    if tail.is_empty() || !tail.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    head.strip_suffix("_mask")
}

fn label_for(root: &Path, image: &Path) -> Option<Label> {
    let rel = image.strip_prefix(root).unwrap_or(image);
    for comp in rel.parent().into_iter().flat_map(Path::components) {
        if let Some(l) = Label::from_prefix(&comp.as_os_str().to_string_lossy()) {
            return Some(l);
        }
    }
    Label::from_prefix(&image.file_name()?.to_string_lossy())
}

/// Walks `root` and pairs each image with its same-directory mask files.
/// Images without a mask, or whose class cannot be inferred, are rejected.
pub fn discover_pairs(root: &Path) -> Result<Discovery> {
    if !root.is_dir() {
        return Err(Error::data_file(root, "dataset root is not a directory"));
    }
    let mut images: BTreeMap<PathBuf, Vec<PathBuf>> = BTreeMap::new();
    let mut masks: Vec<(PathBuf, PathBuf)> = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            Error::data_file(path, e)
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if !IMAGE_EXTENSIONS.contains(&ext.as_str()) {
            continue;
        }
        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
        match mask_base(&stem) {
            Some(base) => {
                let parent = path.parent().unwrap_or(root);
                masks.push((parent.join(base), path.to_path_buf()));
            }
            None => {
                images.insert(path.to_path_buf(), Vec::new());
            }
        }
    }
    // Index images by directory + stem so masks of any extension attach.
    let mut by_stem: BTreeMap<PathBuf, PathBuf> = BTreeMap::new();
    for image in images.keys() {
        let key = image.with_extension("");
        by_stem.insert(key, image.clone());
    }
    let mut out = Discovery::default();
    for (key, mask) in masks {
        match by_stem.get(&key) {
            Some(image) => images.get_mut(image).expect("indexed image").push(mask),
            None => out.rejects.push(Reject {
                path: mask,
                reason: "mask without a matching image".into(),
            }),
        }
    }
    for (image, mut mask_paths) in images {
        if mask_paths.is_empty() {
            out.rejects.push(Reject {
                path: image,
                reason: "no mask file".into(),
            });
            continue;
        }
        let Some(label) = label_for(root, &image) else {
            out.rejects.push(Reject {
                path: image,
                reason: "class not inferable from directory or file name".into(),
            });
            continue;
        };
        mask_paths.sort();
        out.pairs.push(Pair {
            image,
            masks: mask_paths,
            label,
        });
    }
    out.rejects.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}
