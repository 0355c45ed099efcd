//! Minimal read-only ZIP support: central directory listing plus stored and
//! deflate entry extraction.

use std::io::Read;

use flate2::read::DeflateDecoder;

const EOCD_SIG: u32 = 0x0605_4b50;
const CDH_SIG: u32 = 0x0201_4b50;
const LFH_SIG: u32 = 0x0403_4b50;
const EOCD_LEN: usize = 22;
const CDH_LEN: usize = 46;
const LFH_LEN: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("corrupt archive: {0}")]
pub struct CorruptArchive(pub String);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EntryError {
    #[error("unsupported compression method {0}")]
    UnsupportedMethod(u16),
    #[error("encrypted entry")]
    Encrypted,
    #[error("corrupt entry: {0}")]
    Corrupt(String),
    #[error("entry larger than {0} bytes")]
    TooLarge(u64),
}

#[derive(Debug, Clone)]
pub struct ZipEntry {
    pub name: String,
    pub method: u16,
    pub flags: u16,
    pub compressed_size: u64,
    pub uncompressed_size: u64,
    local_header_offset: usize,
}

impl ZipEntry {
    pub fn is_dir(&self) -> bool {
        self.name.ends_with('/')
    }
}

pub struct ZipArchive<'a> {
    data: &'a [u8],
    entries: Vec<ZipEntry>,
}

fn u16_at(d: &[u8], off: usize) -> Option<u16> {
    d.get(off..off.checked_add(2)?).map(|b| u16::from_le_bytes([b[0], b[1]]))
}

fn u32_at(d: &[u8], off: usize) -> Option<u32> {
    d.get(off..off.checked_add(4)?).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

impl<'a> ZipArchive<'a> {
    /// Reads the end-of-central-directory record and every central directory
    /// header.
    pub fn parse(data: &'a [u8]) -> Result<Self, CorruptArchive> {
        let corrupt = |m: &str| CorruptArchive(m.to_string());
        if data.len() < EOCD_LEN {
            return Err(corrupt("too short for an end-of-central-directory record"));
        }
        let lowest = data.len().saturating_sub(EOCD_LEN + u16::MAX as usize);
        let eocd = (lowest..=data.len() - EOCD_LEN)
            .rev()
            .find(|&i| u32_at(data, i) == Some(EOCD_SIG))
            .ok_or_else(|| corrupt("end-of-central-directory record not found"))?;

        let total = u16_at(data, eocd + 10).unwrap_or(0) as usize;
        let cd_size = u32_at(data, eocd + 12).unwrap_or(0) as usize;
        let cd_offset = u32_at(data, eocd + 16).unwrap_or(0) as usize;
        if total == 0xffff || cd_offset == 0xffff_ffff {
            return Err(corrupt("zip64 archives are not supported"));
        }
        if cd_offset.checked_add(cd_size).is_none_or(|end| end > eocd) {
            return Err(corrupt("truncated central directory"));
        }

        let mut entries = Vec::with_capacity(total);
        let mut pos = cd_offset;
        for _ in 0..total {
            if u32_at(data, pos) != Some(CDH_SIG) {
                return Err(corrupt("truncated central directory"));
            }
            let field16 = |o: usize| u16_at(data, pos + o).ok_or_else(|| corrupt("truncated central directory"));
            let field32 = |o: usize| u32_at(data, pos + o).ok_or_else(|| corrupt("truncated central directory"));
            let flags = field16(8)?;
            let method = field16(10)?;
            let compressed_size = u64::from(field32(20)?);
            let uncompressed_size = u64::from(field32(24)?);
            let name_len = field16(28)? as usize;
            let extra_len = field16(30)? as usize;
            let comment_len = field16(32)? as usize;
            let local_header_offset = field32(42)? as usize;
            let name_bytes = data
                .get(pos + CDH_LEN..pos + CDH_LEN + name_len)
                .ok_or_else(|| corrupt("truncated central directory"))?;
            entries.push(ZipEntry {
                name: String::from_utf8_lossy(name_bytes).into_owned(),
                method,
                flags,
                compressed_size,
                uncompressed_size,
                local_header_offset,
            });
            pos += CDH_LEN + name_len + extra_len + comment_len;
        }
        Ok(ZipArchive { data, entries })
    }

    pub fn entries(&self) -> &[ZipEntry] {
        &self.entries
    }

    /// Decompresses at most `limit` bytes of `entry`.
    pub fn read_prefix(&self, entry: &ZipEntry, limit: u64) -> Result<Vec<u8>, EntryError> {
        let raw = self.raw_data(entry)?;
        let want = entry.uncompressed_size.min(limit);
        match entry.method {
            0 => Ok(raw[..raw.len().min(want as usize)].to_vec()),
            8 => {
                let mut out = Vec::with_capacity(want.min(1 << 20) as usize);
                DeflateDecoder::new(raw)
                    .take(want)
                    .read_to_end(&mut out)
                    .map_err(|e| EntryError::Corrupt(e.to_string()))?;
                Ok(out)
            }
            m => Err(EntryError::UnsupportedMethod(m)),
        }
    }

    /// Decompresses the whole entry, refusing entries larger than `max`.
    pub fn read_all(&self, entry: &ZipEntry, max: u64) -> Result<Vec<u8>, EntryError> {
        if entry.uncompressed_size > max {
            return Err(EntryError::TooLarge(max));
        }
        let out = self.read_prefix(entry, entry.uncompressed_size)?;
        if out.len() as u64 != entry.uncompressed_size {
            return Err(EntryError::Corrupt("short entry data".into()));
        }
        Ok(out)
    }

    fn raw_data(&self, entry: &ZipEntry) -> Result<&'a [u8], EntryError> {
        if entry.flags & 1 != 0 {
            return Err(EntryError::Encrypted);
        }
        if entry.method != 0 && entry.method != 8 {
            return Err(EntryError::UnsupportedMethod(entry.method));
        }
        let corrupt = || EntryError::Corrupt("bad local header".into());
        let lh = entry.local_header_offset;
        if u32_at(self.data, lh) != Some(LFH_SIG) {
            return Err(corrupt());
        }
        let name_len = u16_at(self.data, lh + 26).ok_or_else(corrupt)? as usize;
        let extra_len = u16_at(self.data, lh + 28).ok_or_else(corrupt)? as usize;
        let start = lh + LFH_LEN + name_len + extra_len;
        let end = start
            .checked_add(entry.compressed_size as usize)
            .ok_or_else(|| EntryError::Corrupt("entry data out of bounds".into()))?;
        self.data
            .get(start..end)
            .ok_or_else(|| EntryError::Corrupt("entry data out of bounds".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_bytes_are_corrupt() {
        assert!(ZipArchive::parse(&[1, 2, 3]).is_err());
        assert!(ZipArchive::parse(&[0u8; 100]).is_err());
    }

    #[test]
    fn empty_archive() {
        let mut eocd = vec![0u8; EOCD_LEN];
        eocd[..4].copy_from_slice(&EOCD_SIG.to_le_bytes());
        let z = ZipArchive::parse(&eocd).unwrap();
        assert!(z.entries().is_empty());
    }

    #[test]
    fn central_directory_past_eocd_is_corrupt() {
        let mut eocd = vec![0u8; EOCD_LEN];
        eocd[..4].copy_from_slice(&EOCD_SIG.to_le_bytes());
        eocd[10..12].copy_from_slice(&1u16.to_le_bytes());
        eocd[12..16].copy_from_slice(&46u32.to_le_bytes());
        let err = ZipArchive::parse(&eocd).err().unwrap();
        assert!(err.0.contains("truncated central directory"));
    }
}
