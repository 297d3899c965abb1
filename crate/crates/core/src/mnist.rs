//! Reader for MNIST IDX files.
//!
//! Images: big-endian `u32` magic `0x00000803`, count, rows, cols, then
//! `count * rows * cols` pixel bytes. Labels: magic `0x00000801`, count, then
//! `count` label bytes. Pixels are normalized to `byte / 255`.

use thiserror::Error;

use crate::numerics::Grid2D;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdxError {
    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated file: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{extra} unexpected trailing bytes after {expected} bytes of data")]
    TrailingBytes { expected: usize, extra: usize },
    #[error("label {value} at index {index} is outside 0..=9")]
    BadLabel { index: usize, value: u8 },
    #[error("image dimensions must be positive, got {rows}x{cols}")]
    EmptyImage { rows: usize, cols: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MnistImages {
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<Grid2D>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnistLabels {
    pub labels: Vec<u8>,
}

struct Header<'a> {
    fields: Vec<usize>,
    payload: &'a [u8],
}

fn read_header(bytes: &[u8], magic: u32, fields: usize) -> Result<Header<'_>, IdxError> {
    let header_len = 4 * (1 + fields);
    if bytes.len() < header_len {
        return Err(IdxError::Truncated {
            expected: header_len,
            actual: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    let found = word(0);
    if found != magic {
        return Err(IdxError::BadMagic {
            expected: magic,
            found,
        });
    }
    Ok(Header {
        fields: (1..=fields).map(|i| word(i) as usize).collect(),
        payload: &bytes[header_len..],
    })
}

fn check_payload(header_len: usize, payload: &[u8], expected: usize) -> Result<(), IdxError> {
    if payload.len() < expected {
        return Err(IdxError::Truncated {
            expected: header_len + expected,
            actual: header_len + payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(IdxError::TrailingBytes {
            expected: header_len + expected,
            extra: payload.len() - expected,
        });
    }
    Ok(())
}

pub fn read_idx_images(bytes: &[u8]) -> Result<MnistImages, IdxError> {
    let h = read_header(bytes, IMAGES_MAGIC, 3)?;
    let (count, rows, cols) = (h.fields[0], h.fields[1], h.fields[2]);
    if rows == 0 || cols == 0 {
        return Err(IdxError::EmptyImage { rows, cols });
    }
    let per_image = rows * cols;
    check_payload(16, h.payload, count * per_image)?;
    let images = h
        .payload
        .chunks_exact(per_image)
        .map(|px| {
            let reals: Vec<f32> = px.iter().map(|&b| f32::from(b) / 255.0).collect();
            Grid2D::from_reals(rows, cols, &reals).expect("chunk has rows*cols pixels")
        })
        .collect();
    Ok(MnistImages { rows, cols, images })
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<MnistLabels, IdxError> {
    let h = read_header(bytes, LABELS_MAGIC, 1)?;
    let count = h.fields[0];
    check_payload(8, h.payload, count)?;
    if let Some(index) = h.payload.iter().position(|&v| v > 9) {
        return Err(IdxError::BadLabel {
            index,
            value: h.payload[index],
        });
    }
    Ok(MnistLabels {
        labels: h.payload.to_vec(),
    })
}

pub fn check_paired(images: &MnistImages, labels: &MnistLabels) -> Result<(), IdxError> {
    if images.images.len() != labels.labels.len() {
        return Err(IdxError::CountMismatch {
            images: images.images.len(),
            labels: labels.labels.len(),
        });
    }
    Ok(())
}

/// Encodes raw pixel rows as an IDX image file. Used to build fixtures.
pub fn write_idx_images(rows: usize, cols: usize, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for word in [IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    for img in images {
        assert_eq!(
            img.len(),
            rows * cols,
            "image does not have rows*cols pixels"
        );
        out.extend_from_slice(img);
    }
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn white_images_normalize_to_one() {
        let bytes = write_idx_images(28, 28, &[vec![255; 784], vec![255; 784]]);
        let parsed = read_idx_images(&bytes).unwrap();
        assert_eq!((parsed.rows, parsed.cols, parsed.images.len()), (28, 28, 2));
        assert!(parsed
            .images
            .iter()
            .all(|g| g.reals().iter().all(|&v| v == 1.0)));
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = write_idx_images(2, 2, &[vec![0; 4]]);
        bytes[3] = 0x02;
        assert_eq!(
            read_idx_images(&bytes).unwrap_err(),
            IdxError::BadMagic {
                expected: 0x803,
                found: 0x802
            }
        );
        assert!(matches!(
            read_idx_labels(&bytes),
            Err(IdxError::BadMagic { .. })
        ));
    }

    #[test]
    fn one_byte_short() {
        let mut bytes = write_idx_images(3, 3, &[vec![9; 9], vec![1; 9]]);
        bytes.pop();
        assert_eq!(
            read_idx_images(&bytes).unwrap_err(),
            IdxError::Truncated {
                expected: 34,
                actual: 33
            }
        );
        let msg = read_idx_images(&bytes).unwrap_err().to_string();
        assert!(msg.contains("34") && msg.contains("33"), "{msg}");
        assert!(matches!(
            read_idx_images(&bytes[..10]),
            Err(IdxError::Truncated { .. })
        ));

        let mut labels = write_idx_labels(&[1, 2, 3]);
        labels.pop();
        assert_eq!(
            read_idx_labels(&labels).unwrap_err(),
            IdxError::Truncated {
                expected: 11,
                actual: 10
            }
        );
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut labels = write_idx_labels(&[1]);
        labels.push(0);
        assert!(matches!(
            read_idx_labels(&labels),
            Err(IdxError::TrailingBytes { extra: 1, .. })
        ));
    }

    #[test]
    fn label_out_of_range() {
        let bytes = write_idx_labels(&[0, 9, 10, 3]);
        assert_eq!(
            read_idx_labels(&bytes).unwrap_err(),
            IdxError::BadLabel {
                index: 2,
                value: 10
            }
        );
    }

    #[test]
    fn pairing() {
        let imgs = read_idx_images(&write_idx_images(1, 1, &[vec![0], vec![1]])).unwrap();
        let labels = read_idx_labels(&write_idx_labels(&[4])).unwrap();
        assert_eq!(
            check_paired(&imgs, &labels).unwrap_err(),
            IdxError::CountMismatch {
                images: 2,
                labels: 1
            }
        );
    }

    proptest! {
        #[test]
        fn round_trip(rows in 1usize..6, cols in 1usize..6, pixels in proptest::collection::vec(any::<u8>(), 0..120)) {
            let n = pixels.len() / (rows * cols);
            let images: Vec<Vec<u8>> = pixels.chunks_exact(rows * cols).take(n).map(<[u8]>::to_vec).collect();
            let parsed = read_idx_images(&write_idx_images(rows, cols, &images)).unwrap();
            prop_assert_eq!(parsed.images.len(), images.len());
            for (g, raw) in parsed.images.iter().zip(&images) {
                let back: Vec<u8> = g.reals().iter().map(|v| (v * 255.0).round() as u8).collect();
                prop_assert_eq!(&back, raw);
                prop_assert!(g.reals().iter().all(|v| (0.0..=1.0).contains(v)));
            }
            let labels: Vec<u8> = pixels.iter().map(|p| p % 10).collect();
            prop_assert_eq!(read_idx_labels(&write_idx_labels(&labels)).unwrap().labels, labels);
        }
    }
}
