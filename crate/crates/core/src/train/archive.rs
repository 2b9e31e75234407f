//! Minimal zip container: stored (uncompressed) entries with a fixed
//! timestamp, so identical contents always give identical bytes.

use crate::error::{Error, Result};

const LOCAL_SIG: u32 = 0x0403_4b50;
const CENTRAL_SIG: u32 = 0x0201_4b50;
const END_SIG: u32 = 0x0605_4b50;
const VERSION: u16 = 20;
/// 1980-01-01, the earliest DOS date.
const DOS_DATE: u16 = (1 << 5) | 1;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Archive {
    entries: Vec<(String, Vec<u8>)>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an entry; names must be unique.
    pub fn add(&mut self, name: impl Into<String>, data: Vec<u8>) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate archive entry {name}")));
        }
        self.entries.push((name, data));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, d)| d.as_slice())
    }

    pub fn require(&self, name: &str) -> Result<&[u8]> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("archive has no entry {name}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let mut central = Vec::new();
        for (name, data) in &self.entries {
            let offset = u32_len(out.len())?;
            let size = u32_len(data.len())?;
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::Checkpoint(format!("entry name too long: {name}")))?;
            let crc = crc32fast::hash(data);

            put32(&mut out, LOCAL_SIG);
            for v in [VERSION, 0, 0, 0, DOS_DATE] {
                put16(&mut out, v);
            }
            for v in [crc, size, size] {
                put32(&mut out, v);
            }
            put16(&mut out, name_len);
            put16(&mut out, 0);
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(data);

            put32(&mut central, CENTRAL_SIG);
            for v in [VERSION, VERSION, 0, 0, 0, DOS_DATE] {
                put16(&mut central, v);
            }
            for v in [crc, size, size] {
                put32(&mut central, v);
            }
            for v in [name_len, 0, 0, 0, 0] {
                put16(&mut central, v);
            }
            put32(&mut central, 0);
            put32(&mut central, offset);
            central.extend_from_slice(name.as_bytes());
        }
        let cd_offset = u32_len(out.len())?;
        let cd_size = u32_len(central.len())?;
        let count = u16::try_from(self.entries.len())
            .map_err(|_| Error::Checkpoint("too many archive entries".into()))?;
        out.extend_from_slice(&central);
        put32(&mut out, END_SIG);
        for v in [0, 0, count, count] {
            put16(&mut out, v);
        }
        put32(&mut out, cd_size);
        put32(&mut out, cd_offset);
        put16(&mut out, 0);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(format!("malformed archive: {msg}"));
        if bytes.len() < 22 {
            return Err(bad("too short"));
        }
        let end = (0..=bytes.len() - 22)
            .rev()
            .find(|&i| get32(bytes, i) == Some(END_SIG))
            .ok_or_else(|| bad("no end record"))?;
        let count = get16(bytes, end + 10).ok_or_else(|| bad("truncated end record"))? as usize;
        let mut pos = get32(bytes, end + 16).ok_or_else(|| bad("truncated end record"))? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            if get32(bytes, pos) != Some(CENTRAL_SIG) {
                return Err(bad("bad central header"));
            }
            let field16 = |o: usize| get16(bytes, pos + o).ok_or_else(|| bad("truncated central header"));
            let field32 = |o: usize| get32(bytes, pos + o).ok_or_else(|| bad("truncated central header"));
            if field16(10)? != 0 {
                return Err(bad("only stored entries are supported"));
            }
            let crc = field32(16)?;
            let size = field32(20)? as usize;
            let name_len = field16(28)? as usize;
            let skip = field16(30)? as usize + field16(32)? as usize;
            let local = field32(42)? as usize;
            let name = bytes
                .get(pos + 46..pos + 46 + name_len)
                .ok_or_else(|| bad("truncated name"))?;
            let name = String::from_utf8(name.to_vec()).map_err(|_| bad("name is not UTF-8"))?;
            pos += 46 + name_len + skip;

            if get32(bytes, local) != Some(LOCAL_SIG) {
                return Err(bad("bad local header"));
            }
            let local_name = get16(bytes, local + 26).ok_or_else(|| bad("truncated local header"))? as usize;
            let local_extra = get16(bytes, local + 28).ok_or_else(|| bad("truncated local header"))? as usize;
            let start = local + 30 + local_name + local_extra;
            let data = bytes.get(start..start + size).ok_or_else(|| bad("truncated data"))?;
            if crc32fast::hash(data) != crc {
                return Err(Error::Checkpoint(format!("checksum mismatch in {name}")));
            }
            entries.push((name, data.to_vec()));
        }
        Ok(Self { entries })
    }
}

fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint("archive larger than 4 GiB".into()))
}

fn put16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn get16(b: &[u8], at: usize) -> Option<u16> {
    Some(u16::from_le_bytes(b.get(at..at + 2)?.try_into().ok()?))
}

fn get32(b: &[u8], at: usize) -> Option<u32> {
    Some(u32::from_le_bytes(b.get(at..at + 4)?.try_into().ok()?))
}
