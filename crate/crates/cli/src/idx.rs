//! IDX image/label container, the de facto format for desk-scale image
//! sets. Big-endian header: magic, then one u32 per dimension.

use std::path::Path;

use smash_core::data::Dataset;

use crate::error::{io_err, CliError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    path: &'a Path,
    data: Vec<u8>,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(io_err(path))?;
        Ok(Reader { path, data, pos: 0 })
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.data.len() {
            return Err(CliError::Truncated {
                path: self.path.to_path_buf(),
                needed: n,
                got: self.data.len() - self.pos,
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32_be(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parse an image/label file pair into a normalized dataset (single
/// channel, all indices tagged train).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut ir = Reader::open(images_path)?;
    let magic = ir.u32_be()?;
    if magic != IMAGES_MAGIC {
        return Err(CliError::BadMagic {
            path: images_path.to_path_buf(),
            expected: IMAGES_MAGIC,
            got: magic,
        });
    }
    let n = ir.u32_be()? as usize;
    let h = ir.u32_be()? as usize;
    let w = ir.u32_be()? as usize;
    let pixels = ir.take(n * h * w)?.to_vec();

    let mut lr = Reader::open(labels_path)?;
    let magic = lr.u32_be()?;
    if magic != LABELS_MAGIC {
        return Err(CliError::BadMagic {
            path: labels_path.to_path_buf(),
            expected: LABELS_MAGIC,
            got: magic,
        });
    }
    let ln = lr.u32_be()? as usize;
    if ln != n {
        return Err(CliError::CountMismatch { images: n, labels: ln });
    }
    let raw_labels = lr.take(ln)?.to_vec();

    let images: Vec<f32> = pixels.iter().map(|&b| b as f32 / 255.0).collect();
    let labels: Vec<u32> = raw_labels.iter().map(|&b| b as u32).collect();
    let num_classes = labels.iter().copied().max().unwrap_or(0) as usize + 1;
    Dataset::from_raw(images, n, 1, h, w, labels, num_classes.max(2)).map_err(CliError::from)
}

/// Write a dataset subset back out as an IDX pair (test fixtures and
/// round-trip checks).
pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    pixels: &[u8],
    labels: &[u8],
    h: usize,
    w: usize,
) -> Result<()> {
    let n = labels.len();
    assert_eq!(pixels.len(), n * h * w);
    let mut img = Vec::with_capacity(16 + pixels.len());
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(n as u32).to_be_bytes());
    img.extend_from_slice(&(h as u32).to_be_bytes());
    img.extend_from_slice(&(w as u32).to_be_bytes());
    img.extend_from_slice(pixels);
    std::fs::write(images_path, img).map_err(io_err(images_path))?;

    let mut lab = Vec::with_capacity(8 + n);
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(n as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    std::fs::write(labels_path, lab).map_err(io_err(labels_path))?;
    Ok(())
}
