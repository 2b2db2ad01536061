//! Packet log: per packet, a u64 LE receive time in microseconds since the
//! Unix epoch, then the framed bytes up to and including the 0x00
//! delimiter.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::wire::MAX_FRAMED_LEN;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketLogEntry {
    pub received_us: u64,
    /// COBS bytes including the trailing 0x00.
    pub framed: Vec<u8>,
}

pub fn now_us() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_micros() as u64).unwrap_or(0)
}

pub struct PacketLogWriter<W: Write = BufWriter<File>> {
    out: W,
    count: u64,
}

impl PacketLogWriter {
    pub fn create(path: impl AsRef<Path>) -> io::Result<Self> {
        Ok(PacketLogWriter::new(BufWriter::new(File::create(path)?)))
    }
}

impl<W: Write> PacketLogWriter<W> {
    pub fn new(out: W) -> Self {
        PacketLogWriter { out, count: 0 }
    }

    pub fn append(&mut self, received_us: u64, framed: &[u8]) -> io::Result<()> {
        if framed.last() != Some(&0) || framed[..framed.len() - 1].contains(&0) {
            return Err(io::Error::new(ErrorKind::InvalidInput, "framed packet must end with its only 0x00"));
        }
        self.out.write_all(&received_us.to_le_bytes())?;
        self.out.write_all(framed)?;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn read_log<R: Read>(r: R) -> io::Result<Vec<PacketLogEntry>> {
    let mut bytes = r.bytes();
    let mut entries = Vec::new();
    loop {
        let mut ts = [0u8; 8];
        for (i, slot) in ts.iter_mut().enumerate() {
            match bytes.next() {
                Some(b) => *slot = b?,
                None if i == 0 => return Ok(entries),
                None => return Err(io::Error::new(ErrorKind::UnexpectedEof, "truncated timestamp")),
            }
        }
        let mut framed = Vec::with_capacity(MAX_FRAMED_LEN);
        loop {
            let b = bytes.next().ok_or_else(|| io::Error::new(ErrorKind::UnexpectedEof, "truncated packet"))??;
            framed.push(b);
            if b == 0 {
                break;
            }
            if framed.len() > 256 {
                return Err(io::Error::new(ErrorKind::InvalidData, "packet without delimiter"));
            }
        }
        entries.push(PacketLogEntry { received_us: u64::from_le_bytes(ts), framed });
    }
}

pub fn read_packet_log(path: impl AsRef<Path>) -> io::Result<Vec<PacketLogEntry>> {
    read_log(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::{encode_frame, SensorFrame};

    #[test]
    fn round_trip() {
        let mut w = PacketLogWriter::new(Vec::new());
        let framed: Vec<Vec<u8>> = (0..5u8)
            .map(|i| {
                encode_frame(&SensorFrame { seq: i, timestamp_ms: u32::from(i) * 50, ..Default::default() }).unwrap()
            })
            .collect();
        for (i, f) in framed.iter().enumerate() {
            w.append(1_000 + i as u64, f).unwrap();
        }
        assert_eq!(w.count(), 5);
        let buf = w.into_inner().unwrap();
        assert_eq!(&buf[..8], &1_000u64.to_le_bytes());
        let entries = read_log(&buf[..]).unwrap();
        assert_eq!(entries.len(), 5);
        for (i, e) in entries.iter().enumerate() {
            assert_eq!(e.received_us, 1_000 + i as u64);
            assert_eq!(e.framed, framed[i]);
        }
    }

    #[test]
    fn truncation_is_an_error() {
        let mut w = PacketLogWriter::new(Vec::new());
        w.append(7, &encode_frame(&SensorFrame::default()).unwrap()).unwrap();
        let buf = w.into_inner().unwrap();
        for cut in [3, 8, buf.len() - 1] {
            assert!(read_log(&buf[..cut]).is_err(), "cut {cut}");
        }
        assert!(read_log(&[][..]).unwrap().is_empty());
    }

    #[test]
    fn rejects_unframed_input() {
        let mut w = PacketLogWriter::new(Vec::new());
        assert!(w.append(0, &[1, 2, 3]).is_err());
        assert!(w.append(0, &[1, 0, 3, 0]).is_err());
        assert!(w.append(0, &[]).is_err());
    }
}
