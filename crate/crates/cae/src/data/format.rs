//! On-disk dataset format.
//!
//! Layout: magic "CAED", version u32 LE, variant id u32, image size u32,
//! count u32, seed u64, then `count` fixed-size records
//! (f32[h*w] image, u8[h*w] labels, u8 object count, f32 background),
//! then a CRC32 of every preceding byte. Fixed-size records allow random
//! access to any sample without scanning.

use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::data::{Dataset, DatasetVariant, SampleRecord};
use crate::error::{CaeError, Result};
use crate::tensor::RealTensor;

const MAGIC: &[u8; 4] = b"CAED";
const VERSION: u32 = 1;
const HEADER_LEN: u64 = 4 + 4 + 4 + 4 + 4 + 8;

fn record_len(hw: usize) -> u64 {
    (4 * hw + hw + 1 + 4) as u64
}

impl Dataset {
    /// Serialize to `path`. Byte-identical for identical contents.
    pub fn write(&self, path: &Path) -> Result<()> {
        let (images, labels, n_objects, backgrounds) = self.raw_parts();
        let hw = self.image_size * self.image_size;
        let mut hasher = crc32fast::Hasher::new();
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        let mut emit = |bytes: &[u8], out: &mut dyn Write| -> Result<()> {
            hasher.update(bytes);
            out.write_all(bytes)?;
            Ok(())
        };
        emit(MAGIC, &mut out)?;
        emit(&VERSION.to_le_bytes(), &mut out)?;
        emit(&self.variant.id().to_le_bytes(), &mut out)?;
        emit(&(self.image_size as u32).to_le_bytes(), &mut out)?;
        emit(&(self.len() as u32).to_le_bytes(), &mut out)?;
        emit(&self.seed.to_le_bytes(), &mut out)?;
        for i in 0..self.len() {
            for &v in &images[i * hw..(i + 1) * hw] {
                emit(&v.to_le_bytes(), &mut out)?;
            }
            emit(&labels[i * hw..(i + 1) * hw], &mut out)?;
            emit(&[n_objects[i]], &mut out)?;
            emit(&backgrounds[i].to_le_bytes(), &mut out)?;
        }
        let crc = hasher.finalize();
        out.write_all(&crc.to_le_bytes())?;
        out.flush()?;
        Ok(())
    }

    /// Load a dataset file, validating magic, version and checksum.
    pub fn load(path: &Path) -> Result<Dataset> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < HEADER_LEN as usize + 4 {
            return Err(CaeError::Format(format!(
                "dataset file too short: {} bytes",
                bytes.len()
            )));
        }
        let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
        let want = u32::from_le_bytes(crc_bytes.try_into().unwrap());
        let got = crc32fast::hash(body);
        if want != got {
            return Err(CaeError::Format(format!(
                "dataset checksum mismatch: stored {want:#010x}, computed {got:#010x}"
            )));
        }
        let (variant, image_size, count, seed) = parse_header(body)?;
        let hw = image_size * image_size;
        let expect = HEADER_LEN as usize + count * record_len(hw) as usize;
        if body.len() != expect {
            return Err(CaeError::Format(format!(
                "dataset length {} does not match header (expected {expect})",
                body.len()
            )));
        }
        let mut images = Vec::with_capacity(count * hw);
        let mut labels = Vec::with_capacity(count * hw);
        let mut n_objects = Vec::with_capacity(count);
        let mut backgrounds = Vec::with_capacity(count);
        let mut pos = HEADER_LEN as usize;
        for _ in 0..count {
            for _ in 0..hw {
                images.push(f32::from_le_bytes(body[pos..pos + 4].try_into().unwrap()));
                pos += 4;
            }
            labels.extend_from_slice(&body[pos..pos + hw]);
            pos += hw;
            n_objects.push(body[pos]);
            pos += 1;
            backgrounds.push(f32::from_le_bytes(body[pos..pos + 4].try_into().unwrap()));
            pos += 4;
        }
        Ok(Dataset::from_parts(
            variant, image_size, seed, images, labels, n_objects, backgrounds,
        ))
    }
}

fn parse_header(bytes: &[u8]) -> Result<(DatasetVariant, usize, usize, u64)> {
    if &bytes[0..4] != MAGIC {
        return Err(CaeError::Format("bad dataset magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(CaeError::Format(format!(
            "unsupported dataset version {version}"
        )));
    }
    let variant = DatasetVariant::from_id(u32::from_le_bytes(bytes[8..12].try_into().unwrap()))?;
    let image_size = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let seed = u64::from_le_bytes(bytes[20..28].try_into().unwrap());
    Ok((variant, image_size, count, seed))
}

/// Read one sample by direct seek, without scanning earlier records. The
/// file checksum is not verified on this path.
pub fn read_sample_at(path: &Path, index: usize) -> Result<SampleRecord> {
    let mut file = std::fs::File::open(path)?;
    let mut header = [0u8; HEADER_LEN as usize];
    file.read_exact(&mut header)?;
    let (_, image_size, count, _) = parse_header(&header)?;
    if index >= count {
        return Err(CaeError::InvalidArgument(format!(
            "sample {index} out of range ({count} samples)"
        )));
    }
    let hw = image_size * image_size;
    file.seek(SeekFrom::Start(HEADER_LEN + index as u64 * record_len(hw)))?;
    let mut buf = vec![0u8; record_len(hw) as usize];
    file.read_exact(&mut buf)?;
    let mut image = Vec::with_capacity(hw);
    for i in 0..hw {
        image.push(f32::from_le_bytes(buf[i * 4..i * 4 + 4].try_into().unwrap()) as f64);
    }
    let labels = buf[4 * hw..5 * hw].to_vec();
    let n_objects = buf[5 * hw] as usize;
    let background = f32::from_le_bytes(buf[5 * hw + 1..].try_into().unwrap()) as f64;
    Ok(SampleRecord {
        image: RealTensor::from_vec(&[1, image_size, image_size], image)?,
        labels,
        n_objects,
        background,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetSpec, Split};

    fn small_dataset() -> Dataset {
        let spec = DatasetSpec::new(DatasetVariant::TwoShapesRandBg, Split::Test, 11).with_count(100);
        Dataset::generate(&spec, None).unwrap()
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let ds = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.caed");
        ds.write(&path).unwrap();
        let back = Dataset::load(&path).unwrap();
        assert_eq!(ds, back);
        for i in 0..ds.len() {
            assert_eq!(ds.record(i), back.record(i));
        }
    }

    #[test]
    fn same_spec_and_seed_produce_identical_files() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.caed"), dir.path().join("b.caed"));
        small_dataset().write(&p1).unwrap();
        small_dataset().write(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn random_access_matches_sequential() {
        let ds = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.caed");
        ds.write(&path).unwrap();
        let r = read_sample_at(&path, 7).unwrap();
        assert_eq!(r, ds.record(7));
    }

    #[test]
    fn corruption_is_detected() {
        let ds = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.caed");
        ds.write(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        let err = Dataset::load(&path).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");
    }
}
