//! Versioned binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "FSLABCK\0"
//! version      u32      1
//! arch_len     u32      length of the architecture tag
//! arch         bytes    UTF-8 tag, e.g. "rppo"
//! block_count  u32
//! manifest     block_count x { name_len u32, name bytes, rows u64, cols u64 }
//! data         block_count x rows*cols f64, row-major, in manifest order
//! checksum     u32      CRC-32 (IEEE) of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use crate::params::Params;
use crate::{Matrix, NnError};

pub const MAGIC: &[u8; 8] = b"FSLABCK\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: String,
    pub blocks: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn from_params<P: Params>(arch: &str, params: &P) -> Self {
        Self {
            arch: arch.to_owned(),
            blocks: params
                .named_blocks()
                .into_iter()
                .map(|(n, m)| (n, m.clone()))
                .collect(),
        }
    }

    pub fn block_names(&self) -> impl Iterator<Item = &str> {
        self.blocks.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.arch);
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for (name, m) in &self.blocks {
            put_str(&mut out, name);
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
        }
        for (_, m) in &self.blocks {
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        if bytes.len() < MAGIC.len() + 8 {
            return Err(NnError::Checkpoint("file too short".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(NnError::Checkpoint("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(NnError::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let arch = r.string()?;
        let count = r.u32()? as usize;
        let mut manifest = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = r.string()?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            manifest.push((name, rows, cols));
        }
        let mut blocks = Vec::with_capacity(manifest.len());
        for (name, rows, cols) in manifest {
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| NnError::Checkpoint(format!("block {name} too large")))?;
            let mut data = Vec::with_capacity(n.min(1 << 24));
            for _ in 0..n {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
            }
            blocks.push((name, Matrix::from_vec(rows, cols, data)));
        }
        if r.pos != body.len() {
            return Err(NnError::Checkpoint("trailing bytes before checksum".into()));
        }
        Ok(Self { arch, blocks })
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Copies the stored blocks into `params`, which must have exactly the
    /// same architecture tag, block names and shapes.
    pub fn restore_into<P: Params>(&self, arch: &str, params: &mut P) -> Result<(), NnError> {
        if self.arch != arch {
            return Err(NnError::ArchitectureMismatch(format!(
                "checkpoint holds a `{}` network, expected `{arch}`",
                self.arch
            )));
        }
        let expected: Vec<(String, (usize, usize))> = params
            .named_blocks()
            .into_iter()
            .map(|(n, m)| (n, m.shape()))
            .collect();
        for (i, (name, shape)) in expected.iter().enumerate() {
            match self.blocks.get(i) {
                None => {
                    return Err(NnError::ArchitectureMismatch(format!("missing layer `{name}`")));
                }
                Some((stored, m)) if stored != name => {
                    return Err(NnError::ArchitectureMismatch(format!(
                        "layer `{stored}` found where `{name}` was expected"
                    )));
                }
                Some((_, m)) if m.shape() != *shape => {
                    return Err(NnError::ArchitectureMismatch(format!(
                        "layer `{name}` has shape {:?}, expected {:?}",
                        m.shape(),
                        shape
                    )));
                }
                Some(_) => {}
            }
        }
        if let Some((extra, _)) = self.blocks.get(expected.len()) {
            return Err(NnError::ArchitectureMismatch(format!("unexpected layer `{extra}`")));
        }
        for (dst, (_, src)) in params.blocks_mut().into_iter().zip(&self.blocks) {
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| NnError::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, NnError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| NnError::Checkpoint("non-UTF-8 name".into()))
    }
}
