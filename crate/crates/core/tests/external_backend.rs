use std::time::Duration;

use landmap::backend::{
    make_external_backend, predict_tile, Backend, ExternalOptions, TileContext,
};
use landmap::classes::ClassMap;
use landmap::hash;
use landmap::pipeline::{infer_map, InferOptions, StackSource};
use landmap::raster::{GeoTransform, Window};
use landmap::spectral::{Channel, ChannelNorm, ChannelStack};
use landmap::tiling::{PadMode, TileSpec};
use landmap::Error;

const ECHO: &str = env!("CARGO_BIN_EXE_landmap-echo-backend");

fn echo(args: &[&str]) -> Vec<String> {
    std::iter::once(ECHO)
        .chain(args.iter().copied())
        .map(String::from)
        .collect()
}

fn opts(tile: usize, classes: usize) -> ExternalOptions {
    ExternalOptions {
        tile,
        num_classes: classes,
        timeout: Duration::from_secs(20),
        ..ExternalOptions::default()
    }
}

fn tile(id: u64, n: usize, channels: usize) -> ChannelStack {
    let planes = (0..channels)
        .map(|c| {
            (0..n * n)
                .map(|i| hash::unit(hash::mix(&[id, c as u64, i as u64])) as f32)
                .collect()
        })
        .collect();
    let names = [Channel::B, Channel::G, Channel::R][..channels].to_vec();
    ChannelStack::new(
        n,
        n,
        names,
        planes,
        vec![ChannelNorm::IDENTITY; channels],
        None,
    )
    .unwrap()
}

fn ctx(id: u64, n: usize) -> TileContext {
    TileContext {
        id,
        row: 0,
        col: id as usize,
        tile_window: Window::new(0, 0, n, n),
        center_window: Window::new(0, 0, n, n),
        pad_mode: PadMode::Mirror,
    }
}

fn frame(header: &str, payload: &[u8]) -> Vec<u8> {
    let mut v = (header.len() as u32).to_le_bytes().to_vec();
    v.extend_from_slice(header.as_bytes());
    v.extend_from_slice(payload);
    v
}

/// The full session, built independently of the codec.
fn hand_built_session(tiles: u64, n: usize, channels: usize, thresholds: &[f32]) -> Vec<u8> {
    let mut out = frame(
        &format!(r#"{{"type":"hello","version":1,"channels":{channels},"tile":{n}}}"#),
        &[],
    );
    out.extend(frame(r#"{"type":"hello","version":1}"#, &[]));
    for id in 0..tiles {
        let t = tile(id, n, channels);
        let mut payload = Vec::new();
        for p in t.planes() {
            for v in p {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend(frame(
            &format!(r#"{{"type":"predict","id":{id},"dtype":"f32","channels":{channels},"height":{n},"width":{n}}}"#),
            &payload,
        ));
        let labels: Vec<u8> = t
            .plane(0)
            .iter()
            .map(|&v| thresholds.iter().filter(|&&th| th <= v).count() as u8)
            .collect();
        out.extend(frame(
            &format!(r#"{{"type":"labels","id":{id},"dtype":"u8","height":{n},"width":{n}}}"#),
            &labels,
        ));
    }
    out.extend(frame(r#"{"type":"bye"}"#, &[]));
    out
}

#[test]
fn golden_transcript() {
    let (n, c) = (4, 2);
    let backend = make_external_backend(
        &echo(&["--thresholds", "0.25,0.5,0.75"]),
        c,
        ExternalOptions {
            record_transcript: true,
            ..opts(n, 4)
        },
    )
    .unwrap();
    for id in 0..100 {
        let labels = predict_tile(&backend, &tile(id, n, c), &ctx(id, n)).unwrap();
        assert_eq!(labels.len(), n * n);
    }
    let transcript = backend.close().remove(0);
    let expected = hand_built_session(100, n, c, &[0.25, 0.5, 0.75]);
    assert_eq!(transcript, expected);

    let golden =
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/echo_session_v1.bin");
    if std::env::var_os("LANDMAP_BLESS").is_some() {
        std::fs::create_dir_all(golden.parent().unwrap()).unwrap();
        std::fs::write(&golden, &transcript).unwrap();
    }
    assert_eq!(
        std::fs::read(&golden).unwrap(),
        transcript,
        "golden file out of date"
    );
}

#[test]
fn pipeline_through_child_pool() {
    let (w, h) = (70, 45);
    let plane: Vec<f32> = (0..w * h)
        .map(|i| hash::unit(hash::mix(&[9, i as u64])) as f32)
        .collect();
    let stack = ChannelStack::new(
        w,
        h,
        vec![Channel::B],
        vec![plane.clone()],
        vec![ChannelNorm::IDENTITY],
        None,
    )
    .unwrap();
    let source = StackSource::new(stack, GeoTransform::default());
    let backend = make_external_backend(
        &echo(&["--thresholds", "0.3,0.6"]),
        1,
        ExternalOptions {
            pool_size: 2,
            ..opts(16, 3)
        },
    )
    .unwrap();
    assert_eq!(backend.pool_size(), 2);
    let spec = TileSpec::new(16, 8, PadMode::Mirror).unwrap();
    let (map, summary) = infer_map(
        &source,
        &backend,
        spec,
        InferOptions {
            workers: 3,
            progress: false,
        },
    )
    .unwrap();
    let want: Vec<u8> = plane
        .iter()
        .map(|&v| (v >= 0.3) as u8 + (v >= 0.6) as u8)
        .collect();
    assert_eq!(
        map,
        ClassMap::new(w, h, GeoTransform::default(), want).unwrap()
    );
    assert_eq!(summary.tiles, 54);
}

#[test]
fn short_payload_is_protocol_error_with_offset() {
    let n = 4;
    let backend =
        make_external_backend(&echo(&["--short-payload-at", "3"]), 1, opts(n, 2)).unwrap();
    for id in 0..3 {
        predict_tile(&backend, &tile(id, n, 1), &ctx(id, n)).unwrap();
    }
    // child-to-parent stream so far: hello reply, then three labels frames
    let mut offset = frame(r#"{"type":"hello","version":1}"#, &[]).len() as u64;
    for id in 0..3 {
        let header = format!(r#"{{"type":"labels","id":{id},"dtype":"u8","height":4,"width":4}}"#);
        offset += frame(&header, &[0; 16]).len() as u64;
    }
    match predict_tile(&backend, &tile(3, n, 1), &ctx(3, n)) {
        Err(Error::Protocol {
            frame,
            offset: at,
            message,
        }) => {
            assert_eq!((frame, at), (4, offset));
            assert!(message.contains("payload"), "{message}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn child_exit_names_tile_in_flight() {
    let n = 4;
    let backend = make_external_backend(&echo(&["--exit-after", "2"]), 1, opts(n, 2)).unwrap();
    predict_tile(&backend, &tile(10, n, 1), &ctx(10, n)).unwrap();
    predict_tile(&backend, &tile(11, n, 1), &ctx(11, n)).unwrap();
    match predict_tile(&backend, &tile(12, n, 1), &ctx(12, n)) {
        Err(Error::Backend { tile: 12, message }) => {
            assert!(message.contains("exited"), "{message}")
        }
        other => panic!("{other:?}"),
    }
    // no restart: the session stays failed
    assert!(matches!(
        predict_tile(&backend, &tile(13, n, 1), &ctx(13, n)),
        Err(Error::Backend { tile: 13, .. })
    ));
}

#[test]
fn handshake_version_mismatch() {
    match make_external_backend(&echo(&["--version", "2"]), 1, opts(4, 2)) {
        Err(Error::Protocol { message, .. }) => assert!(message.contains("version"), "{message}"),
        Err(other) => panic!("{other:?}"),
        Ok(_) => panic!("handshake accepted version 2"),
    }
}

#[test]
fn garbage_and_wrong_id_are_protocol_errors() {
    for flag in ["--garbage-at", "--wrong-id-at"] {
        let backend = make_external_backend(&echo(&[flag, "0"]), 1, opts(4, 2)).unwrap();
        let err = predict_tile(&backend, &tile(0, 4, 1), &ctx(0, 4)).unwrap_err();
        assert!(matches!(err, Error::Protocol { .. }), "{flag}: {err:?}");
    }
}

#[test]
fn silent_child_times_out() {
    let cmd: Vec<String> = ["sleep", "30"].iter().map(|s| s.to_string()).collect();
    let o = ExternalOptions {
        timeout: Duration::from_millis(300),
        ..opts(4, 2)
    };
    match make_external_backend(&cmd, 1, o) {
        Err(Error::Backend { message, .. }) => assert!(message.contains("no reply"), "{message}"),
        Err(other) => panic!("{other:?}"),
        Ok(_) => panic!("sleep answered the handshake"),
    }
}

#[test]
fn channel_count_is_checked_before_sending() {
    let backend = make_external_backend(&echo(&[]), 3, opts(4, 2)).unwrap();
    assert!(matches!(
        predict_tile(&backend, &tile(0, 4, 1), &ctx(0, 4)),
        Err(Error::ChannelMismatch {
            expected: 3,
            found: 1
        })
    ));
    assert_eq!(backend.expected_channels(), Some(3));
    let labels = predict_tile(&backend, &tile(0, 4, 3), &ctx(0, 4)).unwrap();
    assert!(labels.iter().all(|&l| l < 2));
}

#[test]
fn missing_program_is_io_error() {
    let cmd = vec!["/nonexistent/landmap-backend".to_string()];
    let err = make_external_backend(&cmd, 1, opts(4, 2)).err().unwrap();
    assert_eq!(err.kind(), landmap::ErrorKind::Io);
}
