//! Little-endian binary framing shared by the on-disk formats.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub struct BinWriter<W: Write> {
    out: W,
}

impl<W: Write> BinWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.out.write_all(b)?;
        Ok(())
    }

    pub fn u8(&mut self, x: u8) -> Result<()> {
        self.bytes(&[x])
    }

    pub fn u32(&mut self, x: u32) -> Result<()> {
        self.bytes(&x.to_le_bytes())
    }

    pub fn u64(&mut self, x: u64) -> Result<()> {
        self.bytes(&x.to_le_bytes())
    }

    pub fn f64(&mut self, x: f64) -> Result<()> {
        self.bytes(&x.to_le_bytes())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub struct BinReader<R: Read> {
    input: R,
}

impl<R: Read> BinReader<R> {
    pub fn new(input: R) -> Self {
        Self { input }
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.input
            .read_exact(&mut buf)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::UnexpectedEof => Error::Format("unexpected end of file".into()),
                _ => Error::Io(e),
            })?;
        Ok(buf)
    }

    pub fn expect_magic(&mut self, magic: &[u8; 8], what: &str) -> Result<()> {
        let found = self.array::<8>()?;
        if &found != magic {
            return Err(Error::Format(format!("{what}: bad magic {found:?}")));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn usize(&mut self) -> Result<usize> {
        let x = self.u64()?;
        usize::try_from(x).map_err(|_| Error::Format(format!("count {x} does not fit in memory")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}
