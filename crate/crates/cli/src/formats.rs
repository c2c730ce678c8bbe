//! On-disk formats: dataset manifest, binary feature files, labels CSV,
//! and checkpoint files.
//!
//! * Manifest: UTF-8 text, one record per line: `<id>,<relative path>,<T>`.
//! * Feature file: magic `"FSQ1"`, `u32 T`, `u32 D` (must be 74), then
//!   `T·D` little-endian `f32`, row-major.
//! * Labels: CSV with header `id,happy,sad,anger,surprise,disgust,fear`,
//!   floats in `[0, 3]`.

use std::fs;
use std::io::Write;
use std::path::Path;

use mtsp_core::checkpoint;
use mtsp_core::data::{Dataset, EmotionLabel, FeatureSequence};
use mtsp_core::nn::Model;
use mtsp_core::tensor::Tensor;
use mtsp_core::{EMOTION_COUNT, EMOTION_NAMES, FEATURE_DIM};

use crate::error::{AppError, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const FEATURES_DIR: &str = "features";
pub const FEATURE_MAGIC: [u8; 4] = *b"FSQ1";

/// What happened during ingestion; non-finite feature values are repaired
/// to 0 (the post-standardization mean) and counted here.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct LoadReport {
    pub sequences: usize,
    pub labeled: usize,
    pub repaired_values: usize,
}

pub fn write_feature_file(path: &Path, features: &Tensor) -> Result<()> {
    let mut bytes = Vec::with_capacity(12 + features.len() * 4);
    bytes.extend_from_slice(&FEATURE_MAGIC);
    bytes.extend_from_slice(&(features.rows() as u32).to_le_bytes());
    bytes.extend_from_slice(&(features.cols() as u32).to_le_bytes());
    for v in features.data() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(AppError::io(format!("writing {}", path.display())))
}

/// Read one feature file; repaired non-finite values are counted into
/// `repaired`.
pub fn read_feature_file(path: &Path, repaired: &mut usize) -> Result<Tensor> {
    let bytes =
        fs::read(path).map_err(AppError::io(format!("reading {}", path.display())))?;
    let fail = |message: String| AppError::Ingest {
        path: path.to_path_buf(),
        line: 0,
        message,
    };
    if bytes.len() < 12 {
        return Err(fail("truncated header".into()));
    }
    if bytes[..4] != FEATURE_MAGIC {
        return Err(fail(format!(
            "bad magic {:?}, expected {:?}",
            &bytes[..4],
            FEATURE_MAGIC
        )));
    }
    let t_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if dim != FEATURE_DIM {
        return Err(fail(format!("feature dim {dim}, expected {FEATURE_DIM}")));
    }
    let expect = 12 + t_len * dim * 4;
    if bytes.len() != expect {
        return Err(fail(format!(
            "payload is {} bytes, expected {expect}",
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes[12..]
        .chunks_exact(4)
        .map(|c| {
            let v = f32::from_le_bytes(c.try_into().unwrap()) as f64;
            if v.is_finite() {
                v
            } else {
                *repaired += 1;
                0.0
            }
        })
        .collect();
    Ok(Tensor::new(vec![t_len, dim], data))
}

/// Write a dataset as manifest + feature files + labels CSV under `dir`.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    let features_dir = dir.join(FEATURES_DIR);
    fs::create_dir_all(&features_dir)
        .map_err(AppError::io(format!("creating {}", features_dir.display())))?;

    let mut manifest = String::new();
    for seq in ds.sequences() {
        let rel = format!("{FEATURES_DIR}/{}.fsq", seq.id);
        write_feature_file(&dir.join(&rel), &seq.features)?;
        manifest.push_str(&format!("{},{},{}\n", seq.id, rel, seq.len()));
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)
        .map_err(AppError::io("writing manifest"))?;

    if !ds.labels().is_empty() {
        let mut out = String::from("id,happy,sad,anger,surprise,disgust,fear\n");
        for (id, label) in ds.labels() {
            out.push_str(id);
            for v in label.intensities {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        fs::write(dir.join(LABELS_FILE), out).map_err(AppError::io("writing labels"))?;
    }
    Ok(())
}

/// Load a dataset from its manifest; labels are read from `labels.csv` next
/// to the manifest when present.
pub fn load_dataset(manifest_path: &Path) -> Result<(Dataset, LoadReport)> {
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let text = fs::read_to_string(manifest_path)
        .map_err(AppError::io(format!("reading {}", manifest_path.display())))?;
    let mut ds = Dataset::new();
    let mut report = LoadReport::default();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |message: String| AppError::Ingest {
            path: manifest_path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let mut parts = line.splitn(3, ',');
        let id = parts.next().unwrap_or_default().trim();
        let rel = parts.next().ok_or_else(|| fail("missing file column".into()))?.trim();
        let t_decl: usize = parts
            .next()
            .ok_or_else(|| fail("missing timestep column".into()))?
            .trim()
            .parse()
            .map_err(|e| fail(format!("bad timestep count: {e}")))?;
        let features = read_feature_file(&base.join(rel), &mut report.repaired_values)?;
        if features.rows() != t_decl {
            return Err(fail(format!(
                "sample {id}: manifest declares {t_decl} timesteps, file has {}",
                features.rows()
            )));
        }
        let seq = FeatureSequence::new(id.to_string(), features)?;
        ds.push_sequence(seq)?;
        report.sequences += 1;
    }

    let labels_path = base.join(LABELS_FILE);
    if labels_path.exists() {
        let mut rdr = csv::Reader::from_path(&labels_path)
            .map_err(|e| AppError::Ingest {
                path: labels_path.clone(),
                line: 0,
                message: e.to_string(),
            })?;
        let headers = rdr.headers().map_err(|e| AppError::Ingest {
            path: labels_path.clone(),
            line: 1,
            message: e.to_string(),
        })?;
        let mut expected = vec!["id".to_string()];
        expected.extend(EMOTION_NAMES.iter().map(|s| s.to_string()));
        let got: Vec<String> = headers.iter().map(|s| s.to_string()).collect();
        if got != expected {
            return Err(AppError::Ingest {
                path: labels_path.clone(),
                line: 1,
                message: format!("labels header {got:?}, expected {expected:?}"),
            });
        }
        for (row_idx, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| AppError::Ingest {
                path: labels_path.clone(),
                line: row_idx + 2,
                message: e.to_string(),
            })?;
            let fail = |message: String| AppError::Ingest {
                path: labels_path.clone(),
                line: row_idx + 2,
                message,
            };
            if record.len() != 1 + EMOTION_COUNT {
                return Err(fail(format!("{} columns, expected 7", record.len())));
            }
            let id = record[0].to_string();
            let mut intensities = [0.0; EMOTION_COUNT];
            for (i, v) in intensities.iter_mut().enumerate() {
                *v = record[i + 1]
                    .trim()
                    .parse()
                    .map_err(|e| fail(format!("bad intensity: {e}")))?;
            }
            let label = EmotionLabel::new(&id, intensities)?;
            ds.set_label(&id, label)?;
            report.labeled += 1;
        }
    }
    Ok((ds, report))
}

pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(AppError::io(format!("creating {}", parent.display())))?;
        }
    }
    let bytes = checkpoint::encode(model);
    let mut f = fs::File::create(path)
        .map_err(AppError::io(format!("creating {}", path.display())))?;
    f.write_all(&bytes)
        .map_err(AppError::io(format!("writing {}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes =
        fs::read(path).map_err(AppError::io(format!("reading {}", path.display())))?;
    checkpoint::decode(&bytes).map_err(|source| AppError::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}
