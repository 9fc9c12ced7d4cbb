use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::nnkernel::Matrix;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn ingestion(path: &Path, location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        location: location.into(),
        message: message.into(),
    }
}

fn read_u32(path: &Path, bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| ingestion(path, format!("byte {offset}"), "truncated header"))
}

/// Reads an IDX image file (`0x00000803`, u8 pixels) and its label file
/// (`0x00000801`). Pixels are scaled to `[0, 1]`.
pub fn load_idx(images: &Path, labels: &Path, class_count: usize) -> Result<Dataset> {
    let img = fs::read(images)?;
    let lab = fs::read(labels)?;

    let magic = read_u32(images, &img, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(ingestion(images, "byte 0", format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let n = read_u32(images, &img, 4)? as usize;
    let rows = read_u32(images, &img, 8)? as usize;
    let cols = read_u32(images, &img, 12)? as usize;
    let dims = rows * cols;
    let payload = n * dims;
    if img.len() < 16 + payload {
        return Err(ingestion(
            images,
            format!("byte {}", img.len()),
            format!("truncated payload: need {payload} pixel bytes after offset 16"),
        ));
    }

    let magic = read_u32(labels, &lab, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(ingestion(labels, "byte 0", format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let n_labels = read_u32(labels, &lab, 4)? as usize;
    if n_labels != n {
        return Err(ingestion(labels, "byte 4", format!("{n_labels} labels for {n} images")));
    }
    if lab.len() < 8 + n {
        return Err(ingestion(labels, format!("byte {}", lab.len()), format!("truncated payload: need {n} label bytes after offset 8")));
    }

    let mut label_vec = Vec::with_capacity(n);
    for i in 0..n {
        let l = lab[8 + i] as usize;
        if l >= class_count {
            return Err(ingestion(labels, format!("byte {}", 8 + i), format!("label {l} >= class count {class_count}")));
        }
        label_vec.push(l);
    }
    let data = img[16..16 + payload].iter().map(|&p| p as f64 / 255.0).collect();
    Dataset::new(Matrix::from_vec(n, dims, data)?, label_vec, class_count)
}

/// Expected layout of a CSV file: header `label,f0,f1,...,f{features-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvSchema {
    pub features: usize,
    pub classes: usize,
}

/// Reads a labelled CSV. Each feature column is min-max scaled to `[0, 1]`
/// (constant columns become 0).
pub fn load_csv(path: &Path, schema: CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ingestion(path, "line 1", e.to_string()))?;

    let header = reader.headers().map_err(|e| ingestion(path, "line 1", e.to_string()))?.clone();
    let expected: Vec<String> = std::iter::once("label".to_string())
        .chain((0..schema.features).map(|i| format!("f{i}")))
        .collect();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(ingestion(path, "line 1", format!("header {:?} does not match {:?}", header.iter().collect::<Vec<_>>(), expected)));
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            ingestion(path, format!("line {line}"), e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let loc = || format!("line {line}");
        let label: usize = rec[0].parse().map_err(|_| ingestion(path, loc(), format!("label {:?} is not a class index", &rec[0])))?;
        if label >= schema.classes {
            return Err(ingestion(path, loc(), format!("label {label} >= class count {}", schema.classes)));
        }
        for field in rec.iter().skip(1) {
            let v: f64 = field.parse().map_err(|_| ingestion(path, loc(), format!("feature {field:?} is not a number")))?;
            if !v.is_finite() {
                return Err(ingestion(path, loc(), "non-finite feature"));
            }
            data.push(v);
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(ingestion(path, "line 2", "no data rows"));
    }

    let d = schema.features;
    for c in 0..d {
        let col = data.iter().skip(c).step_by(d);
        let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = hi - lo;
        for v in data.iter_mut().skip(c).step_by(d) {
            *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
        }
    }
    let n = labels.len();
    Dataset::new(Matrix::from_vec(n, d, data)?, labels, schema.classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::File::create(&p).unwrap().write_all(bytes).unwrap();
        p
    }

    fn idx_images(n: u32, r: u32, c: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        for x in [n, r, c] {
            v.extend(x.to_be_bytes());
        }
        v.extend(pixels);
        v
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut v = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
        v.extend((labels.len() as u32).to_be_bytes());
        v.extend(labels);
        v
    }

    #[test]
    fn idx_fixture_of_four_images() {
        let dir = tempfile::tempdir().unwrap();
        // 4 images of 2x2
        let pixels: Vec<u8> = vec![0, 255, 51, 102, 255, 255, 0, 0, 10, 20, 30, 40, 0, 0, 0, 0];
        let img = write(dir.path(), "img", &idx_images(4, 2, 2, &pixels));
        let lab = write(dir.path(), "lab", &idx_labels(&[3, 0, 9, 1]));
        let ds = load_idx(&img, &lab, 10).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.dims(), 4);
        assert_eq!(ds.labels, vec![3, 0, 9, 1]);
        assert_eq!(ds.features.row(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(ds.features.row(1), &[1.0, 1.0, 0.0, 0.0]);
        assert!((ds.features.get(2, 3) - 40.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn idx_errors() {
        let dir = tempfile::tempdir().unwrap();
        let lab = write(dir.path(), "lab", &idx_labels(&[0, 1]));
        let mut bad = idx_images(2, 1, 1, &[1, 2]);
        bad[3] = 0x04;
        let img = write(dir.path(), "bad", &bad);
        let err = load_idx(&img, &lab, 10).unwrap_err().to_string();
        assert!(err.contains("magic") && err.contains("byte 0"), "{err}");

        let short = write(dir.path(), "short", &idx_images(2, 2, 2, &[1, 2, 3]));
        let err = load_idx(&short, &lab, 10).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");

        let img = write(dir.path(), "ok", &idx_images(2, 1, 1, &[1, 2]));
        let big = write(dir.path(), "big", &idx_labels(&[0, 7]));
        let err = load_idx(&img, &big, 5).unwrap_err().to_string();
        assert!(err.contains("byte 9"), "{err}");
    }

    #[test]
    fn csv_roundtrip_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.csv", b"label,f0,f1\n0,1.0,5\n1,3.0,5\n2,2.0,5\n");
        let ds = load_csv(&p, CsvSchema { features: 2, classes: 3 }).unwrap();
        assert_eq!(ds.labels, vec![0, 1, 2]);
        assert_eq!(ds.features.as_slice(), &[0.0, 0.0, 1.0, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let schema = CsvSchema { features: 2, classes: 3 };
        let empty = write(dir.path(), "e.csv", b"label,f0,f1\n");
        assert!(matches!(load_csv(&empty, schema), Err(Error::Ingestion { .. })));

        let over = write(dir.path(), "o.csv", b"label,f0,f1\n0,1,2\n3,1,2\n");
        let err = load_csv(&over, schema).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");

        let header = write(dir.path(), "h.csv", b"y,f0,f1\n0,1,2\n");
        assert!(load_csv(&header, schema).unwrap_err().to_string().contains("header"));

        let nan = write(dir.path(), "n.csv", b"label,f0,f1\n0,abc,2\n");
        assert!(load_csv(&nan, schema).unwrap_err().to_string().contains("line 2"));
    }
}
