//! JSONL dataset ingestion: one item per line, field requirements depending
//! on the dataset kind, and image-id resolution against an image root.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use lps_core::metrics::{PopeLabel, PopeSplit};
use lps_core::ImageRef;

use crate::config::{DatasetConfig, DatasetKind};

/// One dataset line. Which fields must be present depends on the kind:
/// POPE items need `question`, `label`, and `split`; caption items need at
/// least one reference; CHAIR and Multitrust read `objects` as ground
/// truth (an empty list means no vocabulary object is in the image).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetItem {
    pub image_id: String,
    /// Objects actually present in the image.
    #[serde(default)]
    pub objects: Vec<String>,
    /// Reference captions.
    #[serde(default)]
    pub references: Vec<String>,
    /// Yes/no object-presence question.
    #[serde(default)]
    pub question: Option<String>,
    /// Gold answer to the question.
    #[serde(default)]
    pub label: Option<PopeLabel>,
    /// Negative-sampling regime the question came from.
    #[serde(default)]
    pub split: Option<PopeSplit>,
}

/// A validated dataset line with its stable item id. POPE ids are
/// `{image_id}#{line}` because several questions can share one image;
/// every other kind uses the image id directly and duplicates are an error.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub item_id: String,
    pub item: DatasetItem,
}

pub fn load_rows(path: &Path, kind: DatasetKind) -> Result<Vec<DatasetRow>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading dataset {}", path.display()))?;
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let item: DatasetItem = serde_json::from_str(line)
            .with_context(|| format!("dataset line {line_no} is not a valid item"))?;
        validate_item(&item, kind).with_context(|| format!("dataset line {line_no}"))?;
        let item_id = match kind {
            DatasetKind::Pope => format!("{}#{line_no}", item.image_id),
            _ => item.image_id.clone(),
        };
        if !seen.insert(item_id.clone()) {
            bail!("dataset line {line_no}: duplicate item id {item_id:?}");
        }
        rows.push(DatasetRow { item_id, item });
    }
    if rows.is_empty() {
        bail!("dataset {} contains no items", path.display());
    }
    Ok(rows)
}

fn validate_item(item: &DatasetItem, kind: DatasetKind) -> Result<()> {
    if item.image_id.trim().is_empty() {
        bail!("image_id is empty");
    }
    match kind {
        DatasetKind::Pope => {
            if item.question.as_deref().is_none_or(|q| q.trim().is_empty()) {
                bail!("pope items need a non-empty question");
            }
            if item.label.is_none() {
                bail!("pope items need a yes/no label");
            }
            if item.split.is_none() {
                bail!("pope items need a split");
            }
        }
        DatasetKind::Captions => {
            if item.references.is_empty() {
                bail!("caption items need at least one reference");
            }
            if item
                .references
                .iter()
                .any(|r| r.split_whitespace().next().is_none())
            {
                bail!("caption references must contain at least one token");
            }
        }
        DatasetKind::Chair | DatasetKind::Multitrust => {}
    }
    Ok(())
}

/// A dataset row whose image resolved to a real file.
#[derive(Debug, Clone)]
pub struct LoadedItem {
    pub row: DatasetRow,
    pub image: ImageRef,
}

const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "png", "jpeg"];

/// Resolves every row's image under `image_root` (default: the dataset's
/// own directory), trying the id as a file name first and then with common
/// image extensions. Missing images fail here, before any provider call.
pub fn resolve_images(rows: Vec<DatasetRow>, config: &DatasetConfig) -> Result<Vec<LoadedItem>> {
    let root = config
        .image_root
        .clone()
        .or_else(|| config.path.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."));
    rows.into_iter()
        .map(|row| {
            let path = resolve_image_path(&root, &row.item.image_id)
                .with_context(|| format!("item {}", row.item_id))?;
            Ok(LoadedItem {
                image: ImageRef::from_path(path),
                row,
            })
        })
        .collect()
}

fn resolve_image_path(root: &Path, image_id: &str) -> Result<PathBuf> {
    let direct = root.join(image_id);
    if direct.is_file() {
        return Ok(direct);
    }
    for ext in IMAGE_EXTENSIONS {
        let candidate = root.join(format!("{image_id}.{ext}"));
        if candidate.is_file() {
            return Ok(candidate);
        }
    }
    bail!(
        "no image file for id {image_id:?} under {} (tried the id itself and .jpg/.png/.jpeg)",
        root.display()
    );
}

/// Loads and validates a dataset, then resolves its images.
pub fn load_dataset(config: &DatasetConfig) -> Result<Vec<LoadedItem>> {
    resolve_images(load_rows(&config.path, config.kind)?, config)
}
