//! MindCube packet codec.
//!
//! A packet is `version || body || crc` (33 bytes): a one-byte version tag,
//! the 30-byte little-endian [`SensorFrame`] body and a big-endian
//! CRC-16/CCITT-FALSE over the first 31 bytes. On the wire each packet is
//! COBS-encoded and terminated by a single `0x00` delimiter, so a framed
//! packet is at most 35 bytes long.
//!
//! Body layout (offsets in bytes):
//!
//! | offset | size | field                          |
//! |--------|------|--------------------------------|
//! | 0      | 1    | `seq` (u8)                     |
//! | 1      | 4    | `timestamp_ms` (u32)           |
//! | 5      | 6    | `accel` x,y,z (i16)            |
//! | 11     | 6    | `gyro` x,y,z (i16)             |
//! | 17     | 6    | `mag` x,y,z (i16)              |
//! | 23     | 4    | `joy` x,y (i16)                |
//! | 27     | 1    | `buttons` (u8, upper nibble 0) |
//! | 28     | 1    | `encoder_delta` (i8)           |
//! | 29     | 1    | `motor_pwm` (u8)               |

use thiserror::Error;

pub const PACKET_VERSION: u8 = 0x01;
pub const BODY_LEN: usize = 30;
pub const PACKET_LEN: usize = 1 + BODY_LEN + 2;
/// Largest possible framed packet: one COBS code byte plus the delimiter.
pub const MAX_FRAMED_LEN: usize = PACKET_LEN + 2;
/// Longest payload accepted by the single-block COBS encoder.
pub const COBS_MAX_INPUT: usize = 254;
pub const DELIMITER: u8 = 0x00;

/// Accelerometer scale, raw LSB per g (±8 g range).
pub const ACCEL_LSB_PER_G: f64 = 4096.0;
/// Gyroscope scale, raw LSB per °/s (±2000 °/s range).
pub const GYRO_LSB_PER_DPS: f64 = 16.4;
/// Magnetometer scale, µT per raw LSB.
pub const MAG_UT_PER_LSB: f64 = 0.15;
pub const JOY_FULL_SCALE: f64 = 32767.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("COBS input of {0} bytes exceeds the 254-byte single-block limit")]
    InputTooLong(usize),
    #[error("malformed frame: {0}")]
    MalformedFrame(&'static str),
    #[error("CRC mismatch: computed {computed:#06x}, received {received:#06x}")]
    CrcMismatch { computed: u16, received: u16 },
    #[error("unsupported packet version {0:#04x}")]
    UnsupportedVersion(u8),
    #[error("invalid frame: {0}")]
    InvalidFrame(&'static str),
}

/// One 20 Hz reading of every MindCube input, in raw sensor units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct SensorFrame {
    pub seq: u8,
    pub timestamp_ms: u32,
    pub accel: [i16; 3],
    pub gyro: [i16; 3],
    pub mag: [i16; 3],
    pub joy: [i16; 2],
    /// Bits 0..=3 are buttons 1..=4.
    pub buttons: u8,
    pub encoder_delta: i8,
    /// Stored vibration motor duty cycle. Carried for completeness only.
    pub motor_pwm: u8,
}

impl SensorFrame {
    pub fn validate(&self) -> Result<(), WireError> {
        if self.buttons & 0xF0 != 0 {
            return Err(WireError::InvalidFrame("buttons upper nibble must be zero"));
        }
        Ok(())
    }

    pub fn accel_g(&self) -> [f64; 3] {
        self.accel.map(|v| f64::from(v) / ACCEL_LSB_PER_G)
    }

    pub fn gyro_dps(&self) -> [f64; 3] {
        self.gyro.map(|v| f64::from(v) / GYRO_LSB_PER_DPS)
    }

    pub fn mag_ut(&self) -> [f64; 3] {
        self.mag.map(|v| f64::from(v) * MAG_UT_PER_LSB)
    }

    /// Joystick deflection, -1..=1 per axis (raw -32768 saturates to -1).
    pub fn joy_unit(&self) -> [f64; 2] {
        self.joy.map(|v| (f64::from(v) / JOY_FULL_SCALE).clamp(-1.0, 1.0))
    }

    /// Button `index` in 1..=4.
    pub fn button(&self, index: u8) -> bool {
        (1..=4).contains(&index) && self.buttons & (1 << (index - 1)) != 0
    }

    fn write_body(&self, out: &mut [u8; BODY_LEN]) {
        out[0] = self.seq;
        out[1..5].copy_from_slice(&self.timestamp_ms.to_le_bytes());
        let mut at = 5;
        for v in self.accel.iter().chain(&self.gyro).chain(&self.mag).chain(&self.joy) {
            out[at..at + 2].copy_from_slice(&v.to_le_bytes());
            at += 2;
        }
        out[27] = self.buttons;
        out[28] = self.encoder_delta as u8;
        out[29] = self.motor_pwm;
    }

    fn read_body(body: &[u8]) -> SensorFrame {
        let i16_at = |at: usize| i16::from_le_bytes([body[at], body[at + 1]]);
        SensorFrame {
            seq: body[0],
            timestamp_ms: u32::from_le_bytes([body[1], body[2], body[3], body[4]]),
            accel: [i16_at(5), i16_at(7), i16_at(9)],
            gyro: [i16_at(11), i16_at(13), i16_at(15)],
            mag: [i16_at(17), i16_at(19), i16_at(21)],
            joy: [i16_at(23), i16_at(25)],
            buttons: body[27],
            encoder_delta: body[28] as i8,
            motor_pwm: body[29],
        }
    }
}

const CRC_TABLE: [u16; 256] = {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = (i as u16) << 8;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 0x8000 != 0 { (crc << 1) ^ 0x1021 } else { crc << 1 };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
};

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no xorout.
pub fn crc16(data: &[u8]) -> u16 {
    data.iter().fold(0xFFFF, |crc, &b| (crc << 8) ^ CRC_TABLE[usize::from((crc >> 8) as u8 ^ b)])
}

/// COBS-encodes `raw` without the trailing delimiter.
pub fn cobs_encode(raw: &[u8]) -> Result<Vec<u8>, WireError> {
    if raw.len() > COBS_MAX_INPUT {
        return Err(WireError::InputTooLong(raw.len()));
    }
    let mut out = Vec::with_capacity(raw.len() + 2);
    let mut code_at = 0;
    out.push(0);
    let mut code = 1u8;
    for &b in raw {
        if b == 0 {
            out[code_at] = code;
            code_at = out.len();
            out.push(0);
            code = 1;
        } else {
            out.push(b);
            code += 1;
            if code == 0xFF {
                out[code_at] = code;
                code_at = out.len();
                out.push(0);
                code = 1;
            }
        }
    }
    out[code_at] = code;
    Ok(out)
}

/// Inverts [`cobs_encode`]. `encoded` must not include the delimiter.
pub fn cobs_decode(encoded: &[u8]) -> Result<Vec<u8>, WireError> {
    if encoded.is_empty() {
        return Err(WireError::MalformedFrame("empty frame"));
    }
    let mut out = Vec::with_capacity(encoded.len());
    let mut at = 0;
    while at < encoded.len() {
        let code = encoded[at];
        if code == 0 {
            return Err(WireError::MalformedFrame("zero byte inside frame"));
        }
        let end = at + usize::from(code);
        if end > encoded.len() {
            return Err(WireError::MalformedFrame("block header points past end"));
        }
        let block = &encoded[at + 1..end];
        if block.contains(&0) {
            return Err(WireError::MalformedFrame("zero byte inside frame"));
        }
        out.extend_from_slice(block);
        at = end;
        if code != 0xFF && at < encoded.len() {
            out.push(0);
        }
    }
    Ok(out)
}

/// Serializes `frame` into the 33-byte pre-COBS packet.
pub fn encode_packet(frame: &SensorFrame) -> Result<[u8; PACKET_LEN], WireError> {
    frame.validate()?;
    let mut packet = [0u8; PACKET_LEN];
    packet[0] = PACKET_VERSION;
    let mut body = [0u8; BODY_LEN];
    frame.write_body(&mut body);
    packet[1..1 + BODY_LEN].copy_from_slice(&body);
    let crc = crc16(&packet[..1 + BODY_LEN]);
    packet[1 + BODY_LEN..].copy_from_slice(&crc.to_be_bytes());
    Ok(packet)
}

/// Parses a 33-byte packet. The CRC is checked before the version so a
/// corrupted version byte reports as a CRC failure.
pub fn decode_packet(packet: &[u8]) -> Result<SensorFrame, WireError> {
    if packet.len() != PACKET_LEN {
        return Err(WireError::MalformedFrame("packet length is not 33 bytes"));
    }
    let (covered, crc_bytes) = packet.split_at(1 + BODY_LEN);
    let computed = crc16(covered);
    let received = u16::from_be_bytes([crc_bytes[0], crc_bytes[1]]);
    if computed != received {
        return Err(WireError::CrcMismatch { computed, received });
    }
    if packet[0] != PACKET_VERSION {
        return Err(WireError::UnsupportedVersion(packet[0]));
    }
    let frame = SensorFrame::read_body(&packet[1..1 + BODY_LEN]);
    frame.validate()?;
    Ok(frame)
}

/// Encodes a frame for the wire: COBS packet plus the `0x00` delimiter.
pub fn encode_frame(frame: &SensorFrame) -> Result<Vec<u8>, WireError> {
    let packet = encode_packet(frame)?;
    let mut framed = cobs_encode(&packet)?;
    framed.push(DELIMITER);
    Ok(framed)
}

/// Decodes one delimiter-stripped COBS frame.
pub fn decode_frame(encoded: &[u8]) -> Result<SensorFrame, WireError> {
    decode_packet(&cobs_decode(encoded)?)
}

/// Splits a byte stream on `0x00` delimiters and decodes each frame.
///
/// Bytes accumulated past [`MAX_FRAMED_LEN`] without a delimiter are
/// discarded up to the next delimiter and reported once as malformed.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    overflowed: bool,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds bytes, returning every frame completed by them in order.
    pub fn push(&mut self, bytes: &[u8]) -> Vec<Result<SensorFrame, WireError>> {
        self.push_framed(bytes)
            .into_iter()
            .map(|r| r.and_then(|framed| decode_frame(&framed[..framed.len() - 1])))
            .collect()
    }

    /// Like [`push`](Self::push) but returns the raw framed bytes,
    /// delimiter included, without decoding them.
    pub fn push_framed(&mut self, bytes: &[u8]) -> Vec<Result<Vec<u8>, WireError>> {
        let mut out = Vec::new();
        for &b in bytes {
            if b == DELIMITER {
                if self.overflowed {
                    out.push(Err(WireError::MalformedFrame("frame exceeds maximum length")));
                } else if !self.buf.is_empty() {
                    let mut framed = std::mem::take(&mut self.buf);
                    framed.push(DELIMITER);
                    out.push(Ok(framed));
                }
                self.buf.clear();
                self.overflowed = false;
            } else if !self.overflowed {
                if self.buf.len() >= MAX_FRAMED_LEN {
                    self.overflowed = true;
                    self.buf.clear();
                } else {
                    self.buf.push(b);
                }
            }
        }
        out
    }

    /// Bytes of an incomplete frame currently buffered.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }
}
