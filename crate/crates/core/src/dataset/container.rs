//! Binary sample container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "OCPD"
//!      4     2  version (u16, = 1)
//!      6     1  flags (u8, reserved, 0)
//!      7     3  reserved (zero)
//!     10     4  sample count N (u32)
//!     14     2  channels d (u16)
//!     16     2  height H (u16)
//!     18     2  width W (u16)
//!     20     8  metadata length in bytes (u64)
//!     28     -  metadata: one "sample_id,subject_id,label,species\n" line
//!               per sample, UTF-8
//!      -     -  image data: N*d*H*W little-endian f32, sample-major then
//!               channel-major (row-major [N, d, H, W])
//! ```
//!
//! The fixed header is exactly 28 bytes, so the file size is
//! `28 + metadata_len + N*d*H*W*4`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Label, SampleMeta, SampleSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"OCPD";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 28;

fn metadata_block(set: &SampleSet) -> Result<Vec<u8>> {
    let mut block = String::new();
    for m in set.meta() {
        if m.sample_id.contains(',') || m.sample_id.contains('\n') {
            return Err(Error::Contract(format!(
                "sample id '{}' may not contain commas or newlines",
                m.sample_id
            )));
        }
        if m.species.contains(',') || m.species.contains('\n') {
            return Err(Error::Contract(format!(
                "species '{}' may not contain commas or newlines",
                m.species
            )));
        }
        block.push_str(&m.sample_id);
        block.push(',');
        block.push_str(&m.subject_id.to_string());
        block.push(',');
        block.push_str(m.label.as_str());
        block.push(',');
        block.push_str(&m.species);
        block.push('\n');
    }
    Ok(block.into_bytes())
}

pub fn save(set: &SampleSet, path: &Path) -> Result<()> {
    let (d, h, w) = set.sample_dims();
    let n = set.len();
    if n > u32::MAX as usize || d > u16::MAX as usize || h > u16::MAX as usize || w > u16::MAX as usize
    {
        return Err(Error::Format("sample set dimensions overflow the container header".into()));
    }
    let meta = metadata_block(set)?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&[0u8; 4])?; // flags + reserved
    out.write_all(&(n as u32).to_le_bytes())?;
    out.write_all(&(d as u16).to_le_bytes())?;
    out.write_all(&(h as u16).to_le_bytes())?;
    out.write_all(&(w as u16).to_le_bytes())?;
    out.write_all(&(meta.len() as u64).to_le_bytes())?;
    out.write_all(&meta)?;
    for v in set.images().data() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<SampleSet> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut header = [0u8; HEADER_LEN];
    reader
        .read_exact(&mut header)
        .map_err(|_| Error::Format("container truncated inside the header".into()))?;
    if &header[0..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad container magic {:?} (expected \"OCPD\")",
            &header[0..4]
        )));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported container version {version} (expected {VERSION})"
        )));
    }
    let n = u32::from_le_bytes(header[10..14].try_into().unwrap()) as usize;
    let d = u16::from_le_bytes(header[14..16].try_into().unwrap()) as usize;
    let h = u16::from_le_bytes(header[16..18].try_into().unwrap()) as usize;
    let w = u16::from_le_bytes(header[18..20].try_into().unwrap()) as usize;
    let meta_len = u64::from_le_bytes(header[20..28].try_into().unwrap());

    let pixels = (n as u64)
        .checked_mul(d as u64)
        .and_then(|v| v.checked_mul(h as u64))
        .and_then(|v| v.checked_mul(w as u64))
        .ok_or_else(|| Error::Format("container dimensions overflow".into()))?;
    if pixels > (usize::MAX / 4) as u64 {
        return Err(Error::Format("container dimensions overflow".into()));
    }

    let mut meta_bytes = vec![0u8; meta_len as usize];
    reader
        .read_exact(&mut meta_bytes)
        .map_err(|_| Error::Format("container truncated inside the metadata block".into()))?;
    let meta_text = String::from_utf8(meta_bytes)
        .map_err(|_| Error::Format("container metadata is not valid UTF-8".into()))?;
    let mut meta = Vec::with_capacity(n);
    for (lineno, line) in meta_text.lines().enumerate() {
        let mut parts = line.splitn(4, ',');
        let (Some(id), Some(subject), Some(label), Some(species)) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::Format(format!(
                "metadata line {lineno} has fewer than 4 fields: '{line}'"
            )));
        };
        let subject_id: u32 = subject
            .parse()
            .map_err(|_| Error::Format(format!("metadata line {lineno}: bad subject id '{subject}'")))?;
        meta.push(SampleMeta {
            sample_id: id.to_string(),
            subject_id,
            label: Label::parse(label)?,
            species: species.to_string(),
        });
    }
    if meta.len() != n {
        return Err(Error::Format(format!(
            "metadata lists {} samples, header says {n}",
            meta.len()
        )));
    }

    let mut raw = vec![0u8; pixels as usize * 4];
    reader
        .read_exact(&mut raw)
        .map_err(|_| Error::Format("container truncated inside the image data".into()))?;
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing)? != 0 {
        return Err(Error::Format("container has trailing bytes after the image data".into()));
    }
    let data: Vec<f32> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let images = Tensor::from_vec(&[n, d, h, w], data)?;
    SampleSet::new(images, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{default_species, generate, GenConfig};

    fn sample_set() -> SampleSet {
        let cfg = GenConfig {
            subjects: 4,
            bonafide: 10,
            species: default_species().into_iter().take(2).map(|s| (s, 3)).collect(),
            channels: 3,
            height: 6,
            width: 10,
        };
        generate(&cfg, 5).unwrap()
    }

    #[test]
    fn round_trip_is_identity() {
        let set = sample_set();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.ocpd");
        save(&set, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(set, loaded);
    }

    #[test]
    fn file_size_matches_format_arithmetic() {
        let set = sample_set();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.ocpd");
        save(&set, &path).unwrap();
        let meta_len = metadata_block(&set).unwrap().len();
        let (d, h, w) = set.sample_dims();
        let expected = HEADER_LEN + meta_len + set.len() * d * h * w * 4;
        assert_eq!(std::fs::metadata(&path).unwrap().len(), expected as u64);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let set = sample_set();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.ocpd");
        save(&set, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        let err = load(&path).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
    }

    #[test]
    fn truncation_is_rejected_without_partial_result() {
        let set = sample_set();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.ocpd");
        save(&set, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        for cut in [10, HEADER_LEN + 3, bytes.len() - 7] {
            std::fs::write(&path, &bytes[..cut]).unwrap();
            assert!(matches!(load(&path), Err(Error::Format(_))), "cut at {cut}");
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        let set = sample_set();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.ocpd");
        save(&set, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load(&path), Err(Error::Format(_))));
    }
}
