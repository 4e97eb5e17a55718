//! Minimal child classifier for exercising the tile wire protocol.
//!
//! The label of each pixel is the number of thresholds at or below its
//! channel-0 value. Flags make it misbehave in controlled ways:
//!
//! ```text
//! --thresholds 0.3,0.6     label cut points (default 0.5)
//! --version N              answer the handshake with version N
//! --exit-after N           exit silently when request N+1 arrives
//! --short-payload-at N     send a truncated labels payload for request N, then exit
//! --garbage-at N           answer request N with bytes that are not a frame
//! --wrong-id-at N          answer request N with a mismatched id
//! ```

use std::io::{self, Write};
use std::process::ExitCode;

use landmap::backend::protocol::{encode_frame, serve, Message};

#[derive(Default)]
struct Opts {
    thresholds: Vec<f32>,
    version: Option<u32>,
    exit_after: Option<u64>,
    short_at: Option<u64>,
    garbage_at: Option<u64>,
    wrong_id_at: Option<u64>,
}

fn parse() -> Result<Opts, String> {
    let mut o = Opts {
        thresholds: vec![0.5],
        ..Default::default()
    };
    let mut args = std::env::args().skip(1);
    while let Some(flag) = args.next() {
        let value = args.next().ok_or_else(|| format!("{flag} needs a value"))?;
        let num = |v: &str| v.parse::<u64>().map_err(|e| format!("{flag}: {e}"));
        match flag.as_str() {
            "--thresholds" => {
                o.thresholds = value
                    .split(',')
                    .map(|t| t.trim().parse::<f32>().map_err(|e| format!("{flag}: {e}")))
                    .collect::<Result<_, _>>()?
            }
            "--version" => o.version = Some(num(&value)? as u32),
            "--exit-after" => o.exit_after = Some(num(&value)?),
            "--short-payload-at" => o.short_at = Some(num(&value)?),
            "--garbage-at" => o.garbage_at = Some(num(&value)?),
            "--wrong-id-at" => o.wrong_id_at = Some(num(&value)?),
            _ => return Err(format!("unknown flag {flag}")),
        }
    }
    Ok(o)
}

fn raw_write(bytes: &[u8]) {
    let mut out = io::stdout().lock();
    let _ = out.write_all(bytes);
    let _ = out.flush();
}

fn main() -> ExitCode {
    let opts = match parse() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("landmap-echo-backend: {e}");
            return ExitCode::from(2);
        }
    };

    if let Some(v) = opts.version {
        // speak a different version, then wait for the parent to give up
        let hello = Message::Hello {
            version: v,
            channels: None,
            tile: None,
        };
        let mut reader = landmap::backend::protocol::FrameReader::new(io::stdin().lock());
        if let Ok(Some(_)) = reader.read_frame() {
            raw_write(&encode_frame(&hello, &[]).expect("hello encodes"));
        }
        while let Ok(Some(_)) = reader.read_frame() {}
        return ExitCode::SUCCESS;
    }

    let mut served = 0u64;
    let result = serve(io::stdin().lock(), io::stdout().lock(), |req| {
        let n = served;
        served += 1;
        if opts.exit_after == Some(n) {
            std::process::exit(0);
        }
        let labels: Vec<u8> = req
            .plane(0)
            .iter()
            .map(|&v| opts.thresholds.iter().filter(|&&t| t <= v).count() as u8)
            .collect();
        if opts.short_at == Some(n) {
            let mut bytes = encode_frame(&Message::labels(req.id, req.height, req.width), &labels)
                .expect("encodes");
            bytes.truncate(bytes.len() - labels.len() / 2);
            raw_write(&bytes);
            std::process::exit(0);
        }
        if opts.garbage_at == Some(n) {
            raw_write(&[0x07, 0x00, 0x00, 0x00]);
            raw_write(b"garbage");
            // stay alive so the parent sees the frame, not the exit
            std::thread::sleep(std::time::Duration::from_secs(5));
            std::process::exit(0);
        }
        if opts.wrong_id_at == Some(n) {
            let bytes = encode_frame(&Message::labels(req.id + 1, req.height, req.width), &labels)
                .expect("encodes");
            raw_write(&bytes);
            std::thread::sleep(std::time::Duration::from_secs(5));
            std::process::exit(0);
        }
        Ok(labels)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("landmap-echo-backend: {e}");
            ExitCode::from(1)
        }
    }
}
