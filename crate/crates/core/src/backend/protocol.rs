//! Tile wire protocol, version 1.
//!
//! Every frame is a `u32` little-endian header length, a compact UTF-8 JSON
//! header and a raw payload whose size follows from the header:
//!
//! | type      | payload                          |
//! |-----------|----------------------------------|
//! | `hello`   | none                             |
//! | `predict` | `channels * height * width` f32 LE, channel-major |
//! | `labels`  | `height * width` u8              |
//! | `bye`     | none                             |
//! | `error`   | none                             |
//!
//! The parent opens with `hello` carrying the channel count and tile size;
//! the child answers with its own `hello`. After that each `predict` gets
//! exactly one `labels` reply with the same id.

use std::io::{ErrorKind as IoErrorKind, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u32 = 1;

/// Headers above this size are rejected as malformed.
pub const MAX_HEADER_LEN: u32 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Message {
    Hello {
        version: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        channels: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tile: Option<usize>,
    },
    Predict {
        id: u64,
        dtype: String,
        channels: usize,
        height: usize,
        width: usize,
    },
    Labels {
        id: u64,
        dtype: String,
        height: usize,
        width: usize,
    },
    Bye,
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        message: String,
    },
}

impl Message {
    pub fn hello(channels: usize, tile: usize) -> Self {
        Message::Hello {
            version: PROTOCOL_VERSION,
            channels: Some(channels),
            tile: Some(tile),
        }
    }

    pub fn hello_reply() -> Self {
        Message::Hello {
            version: PROTOCOL_VERSION,
            channels: None,
            tile: None,
        }
    }

    pub fn predict(id: u64, channels: usize, height: usize, width: usize) -> Self {
        Message::Predict {
            id,
            dtype: "f32".into(),
            channels,
            height,
            width,
        }
    }

    pub fn labels(id: u64, height: usize, width: usize) -> Self {
        Message::Labels {
            id,
            dtype: "u8".into(),
            height,
            width,
        }
    }

    /// Payload size implied by the header, or a description of why the
    /// header is invalid.
    pub fn payload_len(&self) -> std::result::Result<usize, String> {
        match self {
            Message::Predict {
                dtype,
                channels,
                height,
                width,
                ..
            } => {
                if dtype != "f32" {
                    return Err(format!("predict dtype {dtype:?}, expected \"f32\""));
                }
                channels
                    .checked_mul(*height)
                    .and_then(|n| n.checked_mul(*width))
                    .and_then(|n| n.checked_mul(4))
                    .ok_or_else(|| "predict payload size overflows".to_string())
            }
            Message::Labels {
                dtype,
                height,
                width,
                ..
            } => {
                if dtype != "u8" {
                    return Err(format!("labels dtype {dtype:?}, expected \"u8\""));
                }
                height
                    .checked_mul(*width)
                    .ok_or_else(|| "labels payload size overflows".to_string())
            }
            _ => Ok(0),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "hello",
            Message::Predict { .. } => "predict",
            Message::Labels { .. } => "labels",
            Message::Bye => "bye",
            Message::Error { .. } => "error",
        }
    }
}

/// One decoded frame and where it started in the stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub message: Message,
    pub payload: Vec<u8>,
    /// Zero-based frame number within the stream.
    pub index: u64,
    /// Byte offset of the frame's length prefix.
    pub offset: u64,
}

/// Serializes one frame to bytes.
pub fn encode_frame(message: &Message, payload: &[u8]) -> Result<Vec<u8>> {
    let expected = message.payload_len().map_err(|m| Error::Protocol {
        frame: 0,
        offset: 0,
        message: m,
    })?;
    if expected != payload.len() {
        return Err(Error::Protocol {
            frame: 0,
            offset: 0,
            message: format!(
                "{} header implies {expected} payload bytes, got {}",
                message.kind(),
                payload.len()
            ),
        });
    }
    let header = serde_json::to_vec(message)?;
    let mut out = Vec::with_capacity(4 + header.len() + payload.len());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn f32_payload(planes: &[Vec<f32>]) -> Vec<u8> {
    let n: usize = planes.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(n * 4);
    for plane in planes {
        for v in plane {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn f32_from_payload(payload: &[u8]) -> Vec<f32> {
    payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect()
}

pub struct FrameWriter<W> {
    inner: W,
    frames: u64,
    offset: u64,
}

impl<W: Write> FrameWriter<W> {
    pub fn new(inner: W) -> Self {
        FrameWriter {
            inner,
            frames: 0,
            offset: 0,
        }
    }

    /// Writes and flushes one frame, returning its encoded bytes.
    pub fn send(&mut self, message: &Message, payload: &[u8]) -> std::io::Result<Vec<u8>> {
        let bytes = encode_frame(message, payload)
            .map_err(|e| std::io::Error::new(IoErrorKind::InvalidInput, e.to_string()))?;
        self.inner.write_all(&bytes)?;
        self.inner.flush()?;
        self.frames += 1;
        self.offset += bytes.len() as u64;
        Ok(bytes)
    }

    pub fn frames_written(&self) -> u64 {
        self.frames
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

pub struct FrameReader<R> {
    inner: R,
    frames: u64,
    offset: u64,
}

impl<R: Read> FrameReader<R> {
    pub fn new(inner: R) -> Self {
        FrameReader {
            inner,
            frames: 0,
            offset: 0,
        }
    }

    /// Bytes consumed so far.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    /// Reads the next frame. Returns `Ok(None)` on a clean end of stream at
    /// a frame boundary.
    pub fn read_frame(&mut self) -> Result<Option<Frame>> {
        let index = self.frames;
        let start = self.offset;
        let err = |message: String| Error::Protocol {
            frame: index,
            offset: start,
            message,
        };

        let mut len = [0u8; 4];
        let got = self
            .fill(&mut len)
            .map_err(|e| err(format!("read failed: {e}")))?;
        if got == 0 {
            return Ok(None);
        }
        if got < 4 {
            return Err(err(format!(
                "stream ended inside length prefix ({got} of 4 bytes)"
            )));
        }
        let header_len = u32::from_le_bytes(len);
        if header_len == 0 || header_len > MAX_HEADER_LEN {
            return Err(err(format!("implausible header length {header_len}")));
        }
        let mut header = vec![0u8; header_len as usize];
        let got = self
            .fill(&mut header)
            .map_err(|e| err(format!("read failed: {e}")))?;
        if got < header.len() {
            return Err(err(format!(
                "stream ended inside header ({got} of {header_len} bytes)"
            )));
        }
        let message: Message = serde_json::from_slice(&header).map_err(|e| {
            err(format!(
                "malformed header {:?}: {e}",
                String::from_utf8_lossy(&header)
            ))
        })?;
        let expected = message.payload_len().map_err(err)?;
        let mut payload = vec![0u8; expected];
        let got = self
            .fill(&mut payload)
            .map_err(|e| err(format!("read failed: {e}")))?;
        if got < expected {
            return Err(err(format!(
                "wrong payload length: {} header implies {expected} bytes, stream ended after {got}",
                message.kind()
            )));
        }
        self.frames += 1;
        Ok(Some(Frame {
            message,
            payload,
            index,
            offset: start,
        }))
    }

    /// Reads until `buf` is full or the stream ends; returns the byte count.
    fn fill(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let mut n = 0;
        while n < buf.len() {
            match self.inner.read(&mut buf[n..]) {
                Ok(0) => break,
                Ok(k) => n += k,
                Err(e) if e.kind() == IoErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
        self.offset += n as u64;
        Ok(n)
    }
}

/// One decoded predict request as seen by a serving model.
pub struct PredictRequest {
    pub id: u64,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Channel-major samples, `channels * height * width` long.
    pub data: Vec<f32>,
}

impl PredictRequest {
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Serves the child side of a session until `bye` or end of input.
///
/// `model` maps each request to `height * width` labels. Malformed input
/// and model failures are answered with an `error` frame and returned.
pub fn serve<R, W, F>(input: R, output: W, mut model: F) -> Result<()>
where
    R: Read,
    W: Write,
    F: FnMut(&PredictRequest) -> std::result::Result<Vec<u8>, String>,
{
    let mut reader = FrameReader::new(input);
    let mut writer = FrameWriter::new(output);
    let io_err = |e: std::io::Error| Error::io("<protocol output>", e);

    let fail = |writer: &mut FrameWriter<W>, id: Option<u64>, e: Error| -> Error {
        let _ = writer.send(
            &Message::Error {
                id,
                message: e.to_string(),
            },
            &[],
        );
        e
    };

    let first = match reader.read_frame() {
        Ok(Some(f)) => f,
        Ok(None) => return Ok(()),
        Err(e) => return Err(fail(&mut writer, None, e)),
    };
    match first.message {
        Message::Hello { version, .. } if version == PROTOCOL_VERSION => {
            writer.send(&Message::hello_reply(), &[]).map_err(io_err)?;
        }
        Message::Hello { version, .. } => {
            let e = Error::Protocol {
                frame: first.index,
                offset: first.offset,
                message: format!("unsupported protocol version {version}"),
            };
            return Err(fail(&mut writer, None, e));
        }
        other => {
            let e = Error::Protocol {
                frame: first.index,
                offset: first.offset,
                message: format!("expected hello, got {}", other.kind()),
            };
            return Err(fail(&mut writer, None, e));
        }
    }

    loop {
        let frame = match reader.read_frame() {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(()),
            Err(e) => return Err(fail(&mut writer, None, e)),
        };
        match frame.message {
            Message::Predict {
                id,
                channels,
                height,
                width,
                ..
            } => {
                let req = PredictRequest {
                    id,
                    channels,
                    height,
                    width,
                    data: f32_from_payload(&frame.payload),
                };
                match model(&req) {
                    Ok(labels) if labels.len() == height * width => {
                        writer
                            .send(&Message::labels(id, height, width), &labels)
                            .map_err(io_err)?;
                    }
                    Ok(labels) => {
                        let e = Error::Backend {
                            tile: id,
                            message: format!(
                                "model returned {} labels for {height}x{width}",
                                labels.len()
                            ),
                        };
                        return Err(fail(&mut writer, Some(id), e));
                    }
                    Err(message) => {
                        return Err(fail(
                            &mut writer,
                            Some(id),
                            Error::Backend { tile: id, message },
                        ));
                    }
                }
            }
            Message::Bye => return Ok(()),
            other => {
                let e = Error::Protocol {
                    frame: frame.index,
                    offset: frame.offset,
                    message: format!("unexpected {} frame", other.kind()),
                };
                return Err(fail(&mut writer, None, e));
            }
        }
    }
}
