use std::net::SocketAddr;
use std::sync::Arc;
use std::thread;

use blinkpipe::net::{BlinkNet, NetConfig};
use blinkpipe::proto::{run_in_process, stream_frames, Server, ServerConfig, WarmupPolicy};
use blinkpipe::types::{CalibrationProfile, GazeFrame, NS_PER_MS, SAMPLE_PERIOD_NS};

fn session(seconds: i64, blinks_ms: &[i64]) -> Vec<GazeFrame> {
    (0..seconds * 200)
        .map(|i| {
            let t = i * SAMPLE_PERIOD_NS;
            let closed = blinks_ms
                .iter()
                .any(|&s| t >= s * NS_PER_MS && t < (s + 140) * NS_PER_MS);
            let o = if closed { 0.05 } else { 1.0 };
            GazeFrame::open_forward(t).with_openness(o, o)
        })
        .collect()
}

fn start(net: Arc<BlinkNet>) -> (blinkpipe::proto::ServerHandle, SocketAddr) {
    let cfg = ServerConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        ..ServerConfig::default()
    };
    let handle = Server::bind(cfg, net).unwrap().spawn().unwrap();
    let addr = handle.local_addr();
    (handle, addr)
}

#[test]
fn full_window_blink_gets_exactly_one_prediction() {
    let net = Arc::new(BlinkNet::new(&NetConfig::default(), 5));
    let (server, addr) = start(Arc::clone(&net));
    let frames = session(30, &[26_000]);
    let got = stream_frames(addr, frames.clone()).unwrap();
    assert_eq!(got.len(), 1);
    let p = got[0].prediction;
    assert_eq!(p.blink_end_ns, 26_140 * NS_PER_MS);
    assert!(p.confidence > 0.0);

    let local = run_in_process(net, WarmupPolicy::Voluntary, CalibrationProfile::default(), frames).unwrap();
    assert_eq!(local.len(), 1);
    assert_eq!(local[0].label, p.label);
    assert_eq!(local[0].confidence as f32, p.confidence as f32);
    server.shutdown();
}

#[test]
fn warmup_blink_is_passed_through_with_zero_confidence() {
    let net = Arc::new(BlinkNet::new(&NetConfig::for_window(400), 5));
    let (server, addr) = start(net);
    let got = stream_frames(addr, session(4, &[1_000])).unwrap();
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].prediction.confidence, 0.0);
    assert_eq!(got[0].prediction.label, blinkpipe::BlinkLabel::Voluntary);
    assert!(server.stats().frames_dropped == 0);
    server.shutdown();
}

#[test]
fn concurrent_clients_do_not_interfere() {
    let net = Arc::new(BlinkNet::new(&NetConfig::for_window(400), 9));
    let (server, addr) = start(Arc::clone(&net));
    let a = session(8, &[3_000, 5_500]);
    let b = session(8, &[2_500, 4_000, 7_000]);
    let ta = {
        let a = a.clone();
        thread::spawn(move || stream_frames(addr, a).unwrap())
    };
    let tb = {
        let b = b.clone();
        thread::spawn(move || stream_frames(addr, b).unwrap())
    };
    let (ga, gb) = (ta.join().unwrap(), tb.join().unwrap());
    for (got, frames) in [(ga, a), (gb, b)] {
        let local = run_in_process(Arc::clone(&net), WarmupPolicy::Voluntary, CalibrationProfile::default(), frames).unwrap();
        let ends: Vec<_> = got.iter().map(|r| r.prediction.blink_end_ns).collect();
        let local_ends: Vec<_> = local.iter().map(|p| p.blink_end_ns).collect();
        assert_eq!(ends, local_ends);
    }
    assert_eq!(server.stats().sessions, 2);
    server.shutdown();
}

#[test]
fn garbage_bytes_close_only_that_session() {
    use std::io::Write;
    let net = Arc::new(BlinkNet::new(&NetConfig::for_window(400), 9));
    let (server, addr) = start(net);
    let mut bad = std::net::TcpStream::connect(addr).unwrap();
    bad.write_all(b"not a gaze frame at all").unwrap();
    drop(bad);
    let got = stream_frames(addr, session(4, &[3_000])).unwrap();
    assert_eq!(got.len(), 1);
    server.shutdown();
}
