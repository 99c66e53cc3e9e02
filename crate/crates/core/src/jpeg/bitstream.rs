use super::JpegError;

/// MSB-first bit writer. The final partial byte is padded with 1-bits.
#[derive(Clone, Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    pending: u32,
    written: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the low `len` bits of `value`, most significant first.
    pub fn write_bits(&mut self, value: u32, len: u32) {
        debug_assert!(len <= 24);
        if len == 0 {
            return;
        }
        self.acc = (self.acc << len) | (value as u64 & ((1u64 << len) - 1));
        self.pending += len;
        self.written += len as u64;
        while self.pending >= 8 {
            self.pending -= 8;
            self.bytes.push((self.acc >> self.pending) as u8);
        }
        self.acc &= (1u64 << self.pending) - 1;
    }

    pub fn bits_written(&self) -> u64 {
        self.written
    }

    pub fn finish(mut self) -> Vec<u8> {
        if self.pending > 0 {
            let fill = 8 - self.pending;
            self.write_bits((1 << fill) - 1, fill);
            self.written -= fill as u64;
        }
        self.bytes
    }
}

/// MSB-first reader that never reads past the end of its slice.
#[derive(Clone, Debug)]
pub struct BitReader<'a> {
    data: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn bit_offset(&self) -> u64 {
        self.pos
    }

    pub fn bits_left(&self) -> u64 {
        self.data.len() as u64 * 8 - self.pos
    }

    pub fn read_bit(&mut self) -> Result<u32, JpegError> {
        let byte = *self
            .data
            .get((self.pos / 8) as usize)
            .ok_or(JpegError::Bitstream {
                bit_offset: self.pos,
                reason: "unexpected end of stream",
            })?;
        let bit = (byte >> (7 - (self.pos % 8))) & 1;
        self.pos += 1;
        Ok(bit as u32)
    }

    pub fn read_bits(&mut self, len: u32) -> Result<u32, JpegError> {
        if (len as u64) > self.bits_left() {
            return Err(JpegError::Bitstream {
                bit_offset: self.pos,
                reason: "unexpected end of stream",
            });
        }
        let mut v = 0;
        for _ in 0..len {
            v = (v << 1) | self.read_bit()?;
        }
        Ok(v)
    }

    /// Succeeds only if what remains is the 1-bit padding of the final byte.
    pub fn expect_padding(&self) -> Result<(), JpegError> {
        let left = self.bits_left();
        let clean = left < 8
            && (left == 0 || {
                let last = self.data[self.data.len() - 1];
                let mask = (1u16 << left) - 1;
                (last as u16 & mask) == mask
            });
        if clean {
            Ok(())
        } else {
            Err(JpegError::Bitstream {
                bit_offset: self.pos,
                reason: "trailing data after the last block",
            })
        }
    }
}
