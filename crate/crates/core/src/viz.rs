//! Qualitative exporters: per-pixel kernel-norm maps and sampled kernel
//! grids for the involution layers, plus machine-readable result reports.
//!
//! Images are written as binary PPM/PGM so output is byte-exact with no
//! codec in the way.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::data::{write_ppm_p5, write_ppm_p6};
use crate::error::{Error, Result};
use crate::involution::KernelField;
use crate::model::LayerStack;
use crate::tensor::Tensor;
use crate::train::Metrics;

/// Min-max normalize to 0..=255; a constant map degenerates to all zeros.
fn min_max_to_u8(values: &[f64]) -> Vec<u8> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return vec![0; values.len()];
    }
    values
        .iter()
        .map(|&v| ((v - min) / (max - min) * 255.0).round() as u8)
        .collect()
}

fn kernel_field_at(model: &mut LayerStack, image: &Tensor, layer_index: usize) -> Result<KernelField> {
    if image.rank() != 3 {
        return Err(Error::Shape(format!(
            "expected an HxWxC image, got {:?}",
            image.shape()
        )));
    }
    let batched = image.reshape(&[1, image.shape()[0], image.shape()[1], image.shape()[2]])?;
    let (_, fields) = model.forward_with_kernels(&batched)?;
    fields
        .into_iter()
        .find(|(i, _)| *i == layer_index)
        .map(|(_, f)| f)
        .ok_or_else(|| Error::Config(format!("layer {layer_index} is not an involution layer")))
}

/// Per-pixel L2 norm of the generated kernels at one involution layer,
/// min-max normalized and written as a grayscale PGM.
pub fn export_kernel_norm_map(
    model: &mut LayerStack,
    image: &Tensor,
    layer_index: usize,
    out: &Path,
) -> Result<()> {
    let field = kernel_field_at(model, image, layer_index)?;
    let (h, w) = (field.tensor.shape()[1], field.tensor.shape()[2]);
    let q = field.tensor.shape()[3];
    let mut norms = vec![0.0; h * w];
    for (pix, norm) in norms.iter_mut().enumerate() {
        let kv = &field.tensor.data()[pix * q..(pix + 1) * q];
        *norm = kv.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    write_ppm_p5(w, h, &min_max_to_u8(&norms), out)
}

/// Tile the kernels of an SxS grid of evenly spaced pixels, each KxK tile
/// min-max normalized on its own, 1-px separators, written as a PGM.
pub fn export_kernel_grid(
    model: &mut LayerStack,
    image: &Tensor,
    layer_index: usize,
    grid: usize,
    out: &Path,
) -> Result<()> {
    if grid == 0 {
        return Err(Error::Config("grid size must be >= 1".into()));
    }
    let field = kernel_field_at(model, image, layer_index)?;
    let (h, w) = (field.tensor.shape()[1], field.tensor.shape()[2]);
    let k = field.kernel_size;
    let side = grid * k + (grid - 1);
    let mut canvas = vec![0u8; side * side];
    for gy in 0..grid {
        let py = ((gy as f64 + 0.5) * h as f64 / grid as f64) as usize;
        for gx in 0..grid {
            let px = ((gx as f64 + 0.5) * w as f64 / grid as f64) as usize;
            let mut tile = vec![0.0; k * k];
            for (t, v) in tile.iter_mut().enumerate() {
                *v = field.at(0, py, px, t, 0);
            }
            let tile = min_max_to_u8(&tile);
            for ty in 0..k {
                for tx in 0..k {
                    let y = gy * (k + 1) + ty;
                    let x = gx * (k + 1) + tx;
                    canvas[y * side + x] = tile[ty * k + tx];
                }
            }
        }
    }
    write_ppm_p5(side, side, &canvas, out)
}

/// Write an HxWx3 mean image in [0, 1] as a color PPM.
pub fn export_mean_image(mean: &Tensor, out: &Path) -> Result<()> {
    write_ppm_p6(mean, out)
}

/// One result row in the report: which data, which model, its metrics, and
/// its size accounting.
#[derive(Debug, Clone, Serialize)]
pub struct ReportEntry {
    pub dataset: String,
    pub variant: String,
    pub accuracy: f64,
    pub recall: f64,
    pub f1: f64,
    pub params: usize,
    pub size_mb: f64,
}

impl ReportEntry {
    pub fn new(dataset: &str, variant: &str, metrics: &Metrics, params: usize, size_mb: f64) -> Self {
        ReportEntry {
            dataset: dataset.into(),
            variant: variant.into(),
            accuracy: metrics.accuracy,
            recall: metrics.recall,
            f1: metrics.f1,
            params,
            size_mb: (size_mb * 100.0).round() / 100.0,
        }
    }
}

/// Emit the report as pretty JSON and as CSV with identical columns.
pub fn export_report(entries: &[ReportEntry], json_out: &Path, csv_out: &Path) -> Result<()> {
    if entries.is_empty() {
        return Err(Error::Data("report has no entries".into()));
    }
    let json = serde_json::to_string_pretty(entries)
        .map_err(|e| Error::Data(format!("report serialization failed: {e}")))?;
    fs::write(json_out, json + "\n")?;

    let mut csv = String::from("dataset,variant,accuracy,recall,f1,params,size_mb\n");
    for e in entries {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.dataset, e.variant, e.accuracy, e.recall, e.f1, e.params, e.size_mb
        ));
    }
    fs::write(csv_out, csv)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, storage_size_mb, summarize, ModelVariant};
    use crate::rng::Rng;
    use crate::tensor::Tensor;
    use crate::testutil::random_tensor;

    fn hybrid3() -> LayerStack {
        build_model(ModelVariant::Hybrid { inv_layers: 3 }, &mut Rng::new(5)).unwrap()
    }

    #[test]
    fn norm_map_constant_input_is_uniform() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("norm.ppm");
        let mut m = hybrid3();
        let img = Tensor::new(&[48, 48, 3], 0.5).unwrap();
        export_kernel_norm_map(&mut m, &img, 0, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = b"P5\n48 48\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let raster = &bytes[header.len()..];
        assert_eq!(raster.len(), 48 * 48);
        // Constant input -> identical kernels everywhere -> degenerate
        // min-max -> all zeros.
        assert!(raster.iter().all(|&b| b == raster[0]));
        assert_eq!(raster[0], 0);
    }

    #[test]
    fn norm_map_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ppm");
        let b = dir.path().join("b.ppm");
        let img = random_tensor(&[48, 48, 3], 21, 0.5);
        export_kernel_norm_map(&mut hybrid3(), &img, 1, &a).unwrap();
        export_kernel_norm_map(&mut hybrid3(), &img, 1, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn norm_map_rejects_non_involution_layer() {
        let dir = tempfile::tempdir().unwrap();
        let img = Tensor::new(&[48, 48, 3], 0.5).unwrap();
        let err = export_kernel_norm_map(&mut hybrid3(), &img, 5, &dir.path().join("x.ppm"));
        assert!(err.is_err());
    }

    #[test]
    fn kernel_grid_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.ppm");
        let img = random_tensor(&[48, 48, 3], 22, 0.5);
        export_kernel_grid(&mut hybrid3(), &img, 0, 6, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // 6*3 + 5 separators = 23 px square.
        let header = b"P5\n23 23\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len() - header.len(), 23 * 23);
    }

    #[test]
    fn report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let json = dir.path().join("report.json");
        let csv = dir.path().join("report.csv");
        let m = hybrid3();
        let s = summarize(&m).unwrap();
        let metrics = Metrics {
            accuracy: 95.0,
            recall: 94.0,
            f1: 94.5,
            confusion: [[10, 1], [0, 9]],
        };
        let entry = ReportEntry::new("synthetic", "hybrid(3)", &metrics, s.total, storage_size_mb(&m));
        export_report(std::slice::from_ref(&entry), &json, &csv).unwrap();

        let parsed: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
        assert_eq!(parsed[0]["params"], 356_624);
        assert_eq!(parsed[0]["size_mb"], 1.36);
        assert_eq!(parsed[0]["variant"], "hybrid(3)");
        let csv_text = std::fs::read_to_string(&csv).unwrap();
        assert!(csv_text.starts_with("dataset,variant,accuracy,recall,f1,params,size_mb\n"));
        assert!(csv_text.contains("synthetic,hybrid(3),95,94,94.5,356624,1.36"));
    }
}
