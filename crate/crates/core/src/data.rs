//! Dataset loading, binarisation, normalisation, splitting, and synthetic
//! Boolean domains.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::rng;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Rows of real-valued inputs with binary labels.
///
/// `labels` may be empty while a dataset is still unlabelled (a Boolean
/// domain before a target function is applied, or a freshly loaded archive
/// before binarisation); every consumer that needs labels goes through
/// [`LabelledDataset::labels`]. The original 10-class labels of an image
/// archive are kept in `class_labels` so sweeps can re-binarise without
/// re-reading files.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelledDataset {
    inputs: DMatrix<f64>,
    labels: Vec<u8>,
    class_labels: Option<Vec<u8>>,
    name: String,
}

impl LabelledDataset {
    pub fn new(inputs: DMatrix<f64>, labels: Vec<u8>, name: impl Into<String>) -> Result<Self> {
        if inputs.ncols() == 0 || inputs.nrows() == 0 {
            return Err(Error::DatasetInvariant(
                "inputs must have at least one row and one column".into(),
            ));
        }
        if labels.len() != inputs.nrows() {
            return Err(Error::DatasetInvariant(format!(
                "{} labels for {} rows",
                labels.len(),
                inputs.nrows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::DatasetInvariant(format!(
                "binary label takes value {bad}"
            )));
        }
        Ok(LabelledDataset {
            inputs,
            labels,
            class_labels: None,
            name: name.into(),
        })
    }

    pub fn unlabelled(inputs: DMatrix<f64>, name: impl Into<String>) -> Result<Self> {
        if inputs.ncols() == 0 || inputs.nrows() == 0 {
            return Err(Error::DatasetInvariant(
                "inputs must have at least one row and one column".into(),
            ));
        }
        Ok(LabelledDataset {
            inputs,
            labels: Vec::new(),
            class_labels: None,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn is_labelled(&self) -> bool {
        !self.labels.is_empty()
    }

    pub fn labels(&self) -> Result<&[u8]> {
        if self.labels.is_empty() {
            Err(Error::DatasetInvariant(format!(
                "dataset {} has no labels assigned",
                self.name
            )))
        } else {
            Ok(&self.labels)
        }
    }

    /// The 10-class labels carried from an IDX archive, if any.
    pub fn class_labels(&self) -> Option<&[u8]> {
        self.class_labels.as_deref()
    }

    /// Replace the binary labels (e.g. assigning a target function on a
    /// Boolean domain, or re-binarising an archive).
    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::DatasetInvariant(format!(
                "{} labels for {} rows",
                labels.len(),
                self.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::DatasetInvariant(format!(
                "binary label takes value {bad}"
            )));
        }
        self.labels = labels;
        Ok(self)
    }

    /// Binarise the carried 10-class labels with the given scheme.
    pub fn binarised(self, scheme: Binarisation) -> Result<Self> {
        let raw = self.class_labels.clone().ok_or_else(|| {
            Error::DatasetInvariant(format!("dataset {} carries no 10-class labels", self.name))
        })?;
        let labels = binarise(&raw, scheme)?;
        self.with_labels(labels)
    }

    /// Dataset containing the given rows, in order.
    pub fn select(&self, indices: &[usize], name: impl Into<String>) -> Self {
        let rows: Vec<usize> = indices.to_vec();
        let inputs = DMatrix::from_fn(rows.len(), self.dim(), |i, j| self.inputs[(rows[i], j)]);
        let labels = if self.labels.is_empty() {
            Vec::new()
        } else {
            rows.iter().map(|&i| self.labels[i]).collect()
        };
        let class_labels = self
            .class_labels
            .as_ref()
            .map(|cl| rows.iter().map(|&i| cl[i]).collect());
        LabelledDataset {
            inputs,
            labels,
            class_labels,
            name: name.into(),
        }
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.inputs.row(i).iter().cloned().collect()
    }
}

/// Label binarisation schemes for the 10-class image archives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Binarisation {
    /// Even digits to 0, odd digits to 1.
    MnistParity,
    /// T-shirt, pullover, coat, shirt, bag to 0; trouser, dress, sandal,
    /// trainer, ankle boot to 1.
    FashionPartition,
}

pub fn binarise(raw_labels: &[u8], scheme: Binarisation) -> Result<Vec<u8>> {
    raw_labels
        .iter()
        .map(|&l| {
            if l > 9 {
                return Err(Error::LabelOutOfRange(l));
            }
            Ok(match scheme {
                Binarisation::MnistParity => l % 2,
                Binarisation::FashionPartition => match l {
                    // 0 t-shirt, 2 pullover, 4 coat, 6 shirt, 8 bag
                    0 | 2 | 4 | 6 | 8 => 0,
                    // 1 trouser, 3 dress, 5 sandal, 7 trainer, 9 ankle boot
                    _ => 1,
                },
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalisation {
    /// Divide pixels by 255 into [0, 1]; the convention for MSE loss.
    UnitRange,
    /// Leave pixel values in [0, 255]; the convention for CE loss.
    Raw,
}

pub fn normalise(dataset: &LabelledDataset, mode: Normalisation) -> LabelledDataset {
    match mode {
        Normalisation::Raw => dataset.clone(),
        Normalisation::UnitRange => {
            let mut out = dataset.clone();
            out.inputs /= 255.0;
            out
        }
    }
}

/// All `2^d` Boolean inputs in lexicographic order, entries in {0, 1},
/// labels unset.
pub fn boolean_domain(d: usize) -> Result<LabelledDataset> {
    if !(1..=16).contains(&d) {
        return Err(Error::BadBooleanDimension(d));
    }
    let n = 1usize << d;
    let inputs = DMatrix::from_fn(n, d, |i, j| ((i >> (d - 1 - j)) & 1) as f64);
    LabelledDataset::unlabelled(inputs, format!("boolean-{d}"))
}

/// A train/test split with the source record indices kept as the
/// disjointness witness.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: LabelledDataset,
    pub test: LabelledDataset,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    /// Whether both sides were drawn from the same source archive (in which
    /// case the index sets must be disjoint).
    pub shared_source: bool,
}

impl Split {
    fn validate(self) -> Result<Self> {
        if self.train.is_empty() || self.test.is_empty() {
            return Err(Error::DatasetInvariant(
                "both split sides need at least one record".into(),
            ));
        }
        if self.shared_source {
            let mut seen: Vec<usize> = self.train_indices.clone();
            seen.sort_unstable();
            for &i in &self.test_indices {
                if seen.binary_search(&i).is_ok() {
                    return Err(Error::DatasetInvariant(format!(
                        "train and test share source record {i}"
                    )));
                }
            }
        }
        Ok(self)
    }
}

/// Take the first `s_size` records of the seeded shuffle of the training
/// archive and the first `e_size` of the seeded shuffle of the test archive.
pub fn make_split(
    train_archive: &LabelledDataset,
    test_archive: &LabelledDataset,
    s_size: usize,
    e_size: usize,
    seed: u64,
) -> Result<Split> {
    if s_size == 0 || s_size > train_archive.len() {
        return Err(Error::DatasetInvariant(format!(
            "requested |S| = {s_size} from archive of {}",
            train_archive.len()
        )));
    }
    if e_size == 0 || e_size > test_archive.len() {
        return Err(Error::DatasetInvariant(format!(
            "requested |E| = {e_size} from archive of {}",
            test_archive.len()
        )));
    }
    let mut rng_train = rng::rng_from_seed(rng::derive_seed(seed, 0));
    let mut rng_test = rng::rng_from_seed(rng::derive_seed(seed, 1));
    let train_indices = rng::choose_indices(&mut rng_train, train_archive.len(), s_size);
    let test_indices = rng::choose_indices(&mut rng_test, test_archive.len(), e_size);
    Split {
        train: train_archive.select(&train_indices, format!("{}-S", train_archive.name())),
        test: test_archive.select(&test_indices, format!("{}-E", test_archive.name())),
        train_indices,
        test_indices,
        shared_source: false,
    }
    .validate()
}

/// Split a single archive into disjoint S and E: the first `s_size` and the
/// following `e_size` records of one seeded shuffle.
pub fn split_single(
    archive: &LabelledDataset,
    s_size: usize,
    e_size: usize,
    seed: u64,
) -> Result<Split> {
    if s_size + e_size > archive.len() || s_size == 0 || e_size == 0 {
        return Err(Error::DatasetInvariant(format!(
            "requested |S| + |E| = {} from archive of {}",
            s_size + e_size,
            archive.len()
        )));
    }
    let mut r = rng::rng_from_seed(rng::derive_seed(seed, 2));
    let picks = rng::choose_indices(&mut r, archive.len(), s_size + e_size);
    let train_indices = picks[..s_size].to_vec();
    let test_indices = picks[s_size..].to_vec();
    Split {
        train: archive.select(&train_indices, format!("{}-S", archive.name())),
        test: archive.select(&test_indices, format!("{}-E", archive.name())),
        train_indices,
        test_indices,
        shared_source: true,
    }
    .validate()
}

fn read_be_u32(bytes: &[u8], offset: usize, path: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::IdxFormat {
            path: path.to_string(),
            reason: format!("truncated: need {end} bytes, have {}", bytes.len()),
            offset,
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parse IDX image/label archives exactly as distributed for MNIST and
/// Fashion-MNIST (big-endian headers). Pixel values are returned as reals in
/// [0, 255]; the 10-class labels are retained for later binarisation, and
/// the binary label channel is left unset.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabelledDataset> {
    let ipath = images_path.display().to_string();
    let lpath = labels_path.display().to_string();
    let images = std::fs::read(images_path).map_err(|source| Error::Io {
        path: ipath.clone(),
        source,
    })?;
    let labels = std::fs::read(labels_path).map_err(|source| Error::Io {
        path: lpath.clone(),
        source,
    })?;
    parse_idx(&images, &labels, &ipath, &lpath)
}

pub fn parse_idx(
    images: &[u8],
    labels: &[u8],
    images_path: &str,
    labels_path: &str,
) -> Result<LabelledDataset> {
    let magic = read_be_u32(images, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::IdxFormat {
            path: images_path.to_string(),
            reason: format!("bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"),
            offset: 0,
        });
    }
    let n = read_be_u32(images, 4, images_path)? as usize;
    let rows = read_be_u32(images, 8, images_path)? as usize;
    let cols = read_be_u32(images, 12, images_path)? as usize;
    let pixels = rows * cols;
    let need = 16 + n * pixels;
    if images.len() != need {
        return Err(Error::IdxFormat {
            path: images_path.to_string(),
            reason: format!("image payload is {} bytes, header implies {need}", images.len()),
            offset: images.len().min(need),
        });
    }

    let lmagic = read_be_u32(labels, 0, labels_path)?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(Error::IdxFormat {
            path: labels_path.to_string(),
            reason: format!("bad label magic 0x{lmagic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"),
            offset: 0,
        });
    }
    let ln = read_be_u32(labels, 4, labels_path)? as usize;
    if ln != n {
        return Err(Error::IdxFormat {
            path: labels_path.to_string(),
            reason: format!("label count {ln} does not match image count {n}"),
            offset: 4,
        });
    }
    if labels.len() != 8 + ln {
        return Err(Error::IdxFormat {
            path: labels_path.to_string(),
            reason: format!("label payload is {} bytes, header implies {}", labels.len(), 8 + ln),
            offset: labels.len().min(8 + ln),
        });
    }

    let inputs = DMatrix::from_fn(n, pixels, |i, j| images[16 + i * pixels + j] as f64);
    let class_labels = labels[8..].to_vec();
    let mut ds = LabelledDataset::unlabelled(inputs, "idx")?;
    ds.class_labels = Some(class_labels);
    Ok(ds)
}

/// Serialise a dataset back to IDX bytes (images with the given row/col
/// geometry, labels from the carried 10-class channel). Inverse of
/// [`parse_idx`] on byte-accurate archives.
pub fn write_idx(ds: &LabelledDataset, rows: usize, cols: usize) -> Result<(Vec<u8>, Vec<u8>)> {
    if rows * cols != ds.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{rows}x{cols} geometry does not match dimension {}",
            ds.dim()
        )));
    }
    let class_labels = ds.class_labels().ok_or_else(|| {
        Error::DatasetInvariant("dataset carries no 10-class labels to serialise".into())
    })?;
    let n = ds.len();
    let mut images = Vec::with_capacity(16 + n * rows * cols);
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&(n as u32).to_be_bytes());
    images.extend_from_slice(&(rows as u32).to_be_bytes());
    images.extend_from_slice(&(cols as u32).to_be_bytes());
    for i in 0..n {
        for j in 0..rows * cols {
            let v = ds.inputs()[(i, j)];
            if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                return Err(Error::DatasetInvariant(format!(
                    "pixel ({i},{j}) = {v} is not a byte value"
                )));
            }
            images.push(v as u8);
        }
    }
    let mut labels = Vec::with_capacity(8 + n);
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(n as u32).to_be_bytes());
    labels.extend_from_slice(class_labels);
    Ok((images, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_idx() -> (Vec<u8>, Vec<u8>) {
        // 3 images of 2x2 pixels, built byte by byte.
        let mut images = vec![0x00, 0x00, 0x08, 0x03];
        images.extend_from_slice(&3u32.to_be_bytes());
        images.extend_from_slice(&2u32.to_be_bytes());
        images.extend_from_slice(&2u32.to_be_bytes());
        images.extend_from_slice(&[0, 255, 17, 34, 1, 2, 3, 4, 250, 100, 0, 9]);
        let mut labels = vec![0x00, 0x00, 0x08, 0x01];
        labels.extend_from_slice(&3u32.to_be_bytes());
        labels.extend_from_slice(&[7, 0, 4]);
        (images, labels)
    }

    #[test]
    fn parse_hand_built_fixture() {
        let (images, labels) = fixture_idx();
        let ds = parse_idx(&images, &labels, "img", "lbl").unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.row(0), vec![0.0, 255.0, 17.0, 34.0]);
        assert_eq!(ds.row(2), vec![250.0, 100.0, 0.0, 9.0]);
        assert_eq!(ds.class_labels().unwrap(), &[7, 0, 4]);
        assert!(!ds.is_labelled());
    }

    #[test]
    fn idx_roundtrip_bit_identical() {
        let (images, labels) = fixture_idx();
        let ds = parse_idx(&images, &labels, "img", "lbl").unwrap();
        let (out_images, out_labels) = write_idx(&ds, 2, 2).unwrap();
        assert_eq!(out_images, images);
        assert_eq!(out_labels, labels);
    }

    #[test]
    fn empty_file_is_truncation_error() {
        let err = parse_idx(&[], &[], "img", "lbl").unwrap_err();
        match err {
            Error::IdxFormat { reason, offset, .. } => {
                assert!(reason.contains("truncated"), "{reason}");
                assert_eq!(offset, 0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_count_mismatch() {
        let (mut images, labels) = fixture_idx();
        images[2] = 0x09;
        assert!(matches!(
            parse_idx(&images, &labels, "img", "lbl"),
            Err(Error::IdxFormat { offset: 0, .. })
        ));

        let (images, mut labels) = fixture_idx();
        labels[7] = 2; // claim 2 labels for 3 images
        labels.truncate(10);
        let err = parse_idx(&images, &labels, "img", "lbl").unwrap_err();
        match err {
            Error::IdxFormat { reason, offset, .. } => {
                assert!(reason.contains("does not match"), "{reason}");
                assert_eq!(offset, 4);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn binarise_parity_examples() {
        assert_eq!(binarise(&[4], Binarisation::MnistParity).unwrap(), vec![0]);
        assert_eq!(binarise(&[7], Binarisation::MnistParity).unwrap(), vec![1]);
        // parity scheme is l mod 2 on the whole range
        for l in 0..=9u8 {
            assert_eq!(
                binarise(&[l], Binarisation::MnistParity).unwrap(),
                vec![l % 2]
            );
        }
        assert!(matches!(
            binarise(&[10], Binarisation::MnistParity),
            Err(Error::LabelOutOfRange(10))
        ));
    }

    #[test]
    fn binarise_fashion_partition() {
        // trouser = class 1 -> 1
        assert_eq!(binarise(&[1], Binarisation::FashionPartition).unwrap(), vec![1]);
        // shirt = class 6, bag = class 8 -> 0
        assert_eq!(
            binarise(&[6, 8], Binarisation::FashionPartition).unwrap(),
            vec![0, 0]
        );
        // sandal = 5, trainer = 7, ankle boot = 9 -> 1
        assert_eq!(
            binarise(&[5, 7, 9], Binarisation::FashionPartition).unwrap(),
            vec![1, 1, 1]
        );
    }

    #[test]
    fn binarise_is_idempotent_through_reencoding() {
        let raw: Vec<u8> = (0..=9).collect();
        let once = binarise(&raw, Binarisation::MnistParity).unwrap();
        let twice = binarise(&once, Binarisation::MnistParity).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn normalise_examples() {
        let ds = LabelledDataset::new(
            DMatrix::from_row_slice(2, 2, &[255.0, 0.0, 127.5, 255.0]),
            vec![0, 1],
            "t",
        )
        .unwrap();
        let unit = normalise(&ds, Normalisation::UnitRange);
        assert_eq!(unit.inputs()[(0, 0)], 1.0);
        assert_eq!(unit.inputs()[(0, 1)], 0.0);
        let raw = normalise(&ds, Normalisation::Raw);
        assert_eq!(raw.inputs()[(0, 0)], 255.0);

        let zeros = LabelledDataset::new(DMatrix::zeros(1, 3), vec![0], "z").unwrap();
        let unit = normalise(&zeros, Normalisation::UnitRange);
        assert!(unit.inputs().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn boolean_domain_examples() {
        let d2 = boolean_domain(2).unwrap();
        assert_eq!(d2.len(), 4);
        assert_eq!(d2.row(0), vec![0.0, 0.0]);
        assert_eq!(d2.row(1), vec![0.0, 1.0]);
        assert_eq!(d2.row(2), vec![1.0, 0.0]);
        assert_eq!(d2.row(3), vec![1.0, 1.0]);

        assert_eq!(boolean_domain(7).unwrap().len(), 128);
        assert!(matches!(boolean_domain(0), Err(Error::BadBooleanDimension(0))));
        assert!(matches!(boolean_domain(17), Err(Error::BadBooleanDimension(17))));
    }

    #[test]
    fn boolean_domain_rows_distinct() {
        for d in 1..=8 {
            let ds = boolean_domain(d).unwrap();
            let mut rows: Vec<Vec<u64>> = (0..ds.len())
                .map(|i| ds.row(i).iter().map(|&v| v as u64).collect())
                .collect();
            rows.sort();
            rows.dedup();
            assert_eq!(rows.len(), 1 << d);
        }
    }

    #[test]
    fn splits_are_deterministic_and_disjoint() {
        let archive = LabelledDataset::new(
            DMatrix::from_fn(20, 2, |i, j| (i * 2 + j) as f64),
            vec![0; 20],
            "a",
        )
        .unwrap();
        let s1 = split_single(&archive, 8, 5, 99).unwrap();
        let s2 = split_single(&archive, 8, 5, 99).unwrap();
        assert_eq!(s1.train_indices, s2.train_indices);
        assert_eq!(s1.test_indices, s2.test_indices);
        for i in &s1.test_indices {
            assert!(!s1.train_indices.contains(i));
        }

        let other = archive.clone();
        let split = make_split(&archive, &other, 10, 4, 7).unwrap();
        assert_eq!(split.train.len(), 10);
        assert_eq!(split.test.len(), 4);
    }
}
