//! Client for classifiers running in a child process.
//!
//! Each child is a serial channel with strict request/response alternation.
//! A backend may own several children; tile `id` goes to child
//! `id % pool_size`, so routing never depends on scheduling. A crashed child
//! is not restarted: every later request to it fails.

use std::io::BufWriter;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::protocol::{
    encode_frame, f32_payload, Frame, FrameReader, FrameWriter, Message, PROTOCOL_VERSION,
};
use super::{Backend, TileContext};
use crate::classes::IGNORE;
use crate::error::{Error, Result};
use crate::spectral::ChannelStack;

#[derive(Debug, Clone)]
pub struct ExternalOptions {
    /// Tile edge announced in the handshake.
    pub tile: usize,
    pub num_classes: usize,
    /// Per-request wait for the child's reply, also applied to the handshake.
    pub timeout: Duration,
    pub pool_size: usize,
    /// Keep a byte-level copy of every frame exchanged.
    pub record_transcript: bool,
}

impl Default for ExternalOptions {
    fn default() -> Self {
        ExternalOptions {
            tile: 640,
            num_classes: 9,
            timeout: Duration::from_secs(60),
            pool_size: 1,
            record_transcript: false,
        }
    }
}

enum Event {
    Frame(Frame),
    Failed(Error),
    Closed,
}

struct Session {
    child: Child,
    writer: Option<FrameWriter<BufWriter<ChildStdin>>>,
    events: Receiver<Event>,
    transcript: Option<Arc<Mutex<Vec<u8>>>>,
    /// Set after the first failure; the session is unusable from then on.
    broken: Option<String>,
}

impl Session {
    fn spawn(command: &[String], channels: usize, opts: &ExternalOptions) -> Result<Session> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::Config("empty backend command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::io(program, e))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");

        let transcript = opts
            .record_transcript
            .then(|| Arc::new(Mutex::new(Vec::new())));
        let (tx, rx) = mpsc::channel();
        let sink = transcript.clone();
        thread::spawn(move || {
            let mut reader = FrameReader::new(stdout);
            loop {
                let event = match reader.read_frame() {
                    Ok(Some(frame)) => {
                        if let Some(t) = &sink {
                            // re-encoding is exact: headers are canonical compact JSON
                            if let Ok(bytes) = encode_frame(&frame.message, &frame.payload) {
                                t.lock().unwrap().extend_from_slice(&bytes);
                            }
                        }
                        Event::Frame(frame)
                    }
                    Ok(None) => Event::Closed,
                    Err(e) => Event::Failed(e),
                };
                let last = !matches!(event, Event::Frame(_));
                if tx.send(event).is_err() || last {
                    break;
                }
            }
        });

        let mut session = Session {
            child,
            writer: Some(FrameWriter::new(BufWriter::new(stdin))),
            events: rx,
            transcript,
            broken: None,
        };
        session.handshake(channels, opts)?;
        Ok(session)
    }

    fn handshake(&mut self, channels: usize, opts: &ExternalOptions) -> Result<()> {
        let handshake_err = |message: String| Error::Backend { tile: 0, message };
        self.send(&Message::hello(channels, opts.tile), &[])
            .map_err(|e| handshake_err(format!("handshake failed: {e}")))?;
        match self.recv(opts.timeout) {
            Ok(frame) => match frame.message {
                Message::Hello { version, .. } if version == PROTOCOL_VERSION => Ok(()),
                Message::Hello { version, .. } => Err(Error::Protocol {
                    frame: frame.index,
                    offset: frame.offset,
                    message: format!("handshake version mismatch: child speaks {version}, expected {PROTOCOL_VERSION}"),
                }),
                other => Err(Error::Protocol {
                    frame: frame.index,
                    offset: frame.offset,
                    message: format!("expected hello reply, got {}", other.kind()),
                }),
            },
            Err(RecvError::Protocol(e)) => Err(e),
            Err(RecvError::Other(m)) => Err(handshake_err(format!("handshake failed: {m}"))),
        }
    }

    fn send(&mut self, message: &Message, payload: &[u8]) -> std::result::Result<(), String> {
        // recorded before writing so the reply can never be logged first
        if let Some(t) = &self.transcript {
            let bytes = encode_frame(message, payload).map_err(|e| e.to_string())?;
            t.lock().unwrap().extend_from_slice(&bytes);
        }
        let writer = self.writer.as_mut().ok_or("input already closed")?;
        if let Err(e) = writer.send(message, payload) {
            return Err(self.exit_reason(&e.to_string()));
        }
        Ok(())
    }

    fn recv(&mut self, timeout: Duration) -> std::result::Result<Frame, RecvError> {
        match self.events.recv_timeout(timeout) {
            Ok(Event::Frame(f)) => Ok(f),
            Ok(Event::Failed(e)) => Err(RecvError::Protocol(e)),
            Ok(Event::Closed) | Err(RecvTimeoutError::Disconnected) => {
                Err(RecvError::Other(self.exit_reason("output closed")))
            }
            Err(RecvTimeoutError::Timeout) => Err(RecvError::Other(format!(
                "no reply within {:.1} s",
                timeout.as_secs_f64()
            ))),
        }
    }

    /// Describes a lost child, including its exit status when available.
    fn exit_reason(&mut self, what: &str) -> String {
        let deadline = Instant::now() + Duration::from_millis(500);
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) => return format!("child exited ({status}); {what}"),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                _ => return format!("child unresponsive; {what}"),
            }
        }
    }

    fn predict(&mut self, tile: &ChannelStack, id: u64, timeout: Duration) -> Result<Vec<u8>> {
        if let Some(reason) = &self.broken {
            return Err(Error::Backend {
                tile: id,
                message: format!("session unusable after earlier failure: {reason}"),
            });
        }
        let result = self.exchange(tile, id, timeout);
        if let Err(e) = &result {
            self.broken = Some(e.to_string());
        }
        result
    }

    fn exchange(&mut self, tile: &ChannelStack, id: u64, timeout: Duration) -> Result<Vec<u8>> {
        let (w, h) = (tile.width(), tile.height());
        let backend_err = |message: String| Error::Backend { tile: id, message };
        let payload = f32_payload(tile.planes());
        self.send(&Message::predict(id, tile.channel_count(), h, w), &payload)
            .map_err(backend_err)?;
        let frame = match self.recv(timeout) {
            Ok(f) => f,
            Err(RecvError::Protocol(e)) => return Err(e),
            Err(RecvError::Other(m)) => return Err(backend_err(m)),
        };
        let protocol_err = |message: String| Error::Protocol {
            frame: frame.index,
            offset: frame.offset,
            message,
        };
        match &frame.message {
            Message::Labels {
                id: got,
                height,
                width,
                ..
            } => {
                if *got != id {
                    return Err(protocol_err(format!(
                        "reply id {got} does not match request {id}"
                    )));
                }
                if (*height, *width) != (h, w) {
                    return Err(protocol_err(format!(
                        "reply is {height}x{width}, request was {h}x{w} (tile {id})"
                    )));
                }
                Ok(frame.payload)
            }
            Message::Error { message, .. } => {
                Err(backend_err(format!("child reported: {message}")))
            }
            other => Err(protocol_err(format!(
                "expected labels for tile {id}, got {}",
                other.kind()
            ))),
        }
    }

    fn shutdown(&mut self) {
        if self.writer.is_none() {
            return;
        }
        if self.broken.is_none() {
            let _ = self.send(&Message::Bye, &[]);
        }
        self.writer = None;
        // a healthy child gets a grace period; a broken one is killed
        let grace = if self.broken.is_none() { 2000 } else { 0 };
        let deadline = Instant::now() + Duration::from_millis(grace);
        loop {
            match self.child.try_wait() {
                Ok(Some(_)) => return,
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(5)),
                _ => break,
            }
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

enum RecvError {
    Protocol(Error),
    Other(String),
}

pub struct ExternalBackend {
    sessions: Vec<Mutex<Session>>,
    channels: usize,
    opts: ExternalOptions,
    label: String,
}

/// Spawns `opts.pool_size` copies of `command` and handshakes with each.
pub fn make_external_backend(
    command: &[String],
    channels: usize,
    opts: ExternalOptions,
) -> Result<ExternalBackend> {
    if channels == 0 || opts.tile == 0 || opts.pool_size == 0 {
        return Err(Error::Config(
            "external backend needs positive channels, tile and pool size".into(),
        ));
    }
    if !(2..=255).contains(&opts.num_classes) {
        return Err(Error::Config(format!(
            "{} classes outside 2..=255",
            opts.num_classes
        )));
    }
    let mut sessions = Vec::with_capacity(opts.pool_size);
    for _ in 0..opts.pool_size {
        sessions.push(Mutex::new(Session::spawn(command, channels, &opts)?));
    }
    Ok(ExternalBackend {
        sessions,
        channels,
        label: format!("external:{}", command.join(" ")),
        opts,
    })
}

impl ExternalBackend {
    pub fn pool_size(&self) -> usize {
        self.sessions.len()
    }

    /// Frames exchanged with each child so far, in wire order.
    ///
    /// Request and reply bytes are interleaved exactly as they alternate on
    /// the wire. Empty unless transcripts were requested.
    pub fn transcripts(&self) -> Vec<Vec<u8>> {
        self.sessions
            .iter()
            .map(|s| {
                let s = s.lock().unwrap_or_else(|p| p.into_inner());
                s.transcript
                    .as_ref()
                    .map(|t| t.lock().unwrap().clone())
                    .unwrap_or_default()
            })
            .collect()
    }

    /// Sends `bye` to every child, waits for it to exit and returns the
    /// final transcripts.
    pub fn close(self) -> Vec<Vec<u8>> {
        for s in &self.sessions {
            s.lock().unwrap_or_else(|p| p.into_inner()).shutdown();
        }
        self.transcripts()
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl Backend for ExternalBackend {
    fn name(&self) -> &str {
        &self.label
    }

    fn num_classes(&self) -> usize {
        self.opts.num_classes
    }

    fn expected_channels(&self) -> Option<usize> {
        Some(self.channels)
    }

    fn predict(&self, tile: &ChannelStack, ctx: &TileContext) -> Result<Vec<u8>> {
        let slot = (ctx.id % self.sessions.len() as u64) as usize;
        let mut session = self.sessions[slot]
            .lock()
            .unwrap_or_else(|p| p.into_inner());
        let labels = session.predict(tile, ctx.id, self.opts.timeout)?;
        if let Some(bad) = labels
            .iter()
            .find(|&&l| l != IGNORE && l as usize >= self.opts.num_classes)
        {
            return Err(Error::Backend {
                tile: ctx.id,
                message: format!(
                    "child returned label {bad} outside {} classes",
                    self.opts.num_classes
                ),
            });
        }
        Ok(labels)
    }
}
