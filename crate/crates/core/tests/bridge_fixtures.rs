//! Golden frames for the denoiser protocol. The fixture bytes were produced
//! by a separate encoder, so these tests pin the wire format itself.

use std::io::Cursor;
use std::time::Duration;

use ddrm::denoiser::bridge::{
    encode_handshake, encode_handshake_reply, read_handshake, read_handshake_reply, serve_echo, Request, Response,
};
use ddrm::{BridgeClient, DdrmParams64, Geometry, ImageShape, Problem64, SigmaSchedule64, SvdOperator64};

fn fixture(name: &str) -> Vec<u8> {
    let path = format!("{}/tests/fixtures/bridge/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

fn payload() -> Vec<f32> {
    vec![
        0.0,
        -0.0,
        1.5,
        -2.25,
        1e-3,
        f32::MAX,
        f32::INFINITY,
        0.1,
        7.0,
        -1e-30,
        0.5,
        f32::from_bits(0x7fc0_0001),
    ]
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

const GEOMETRY: Geometry = Geometry {
    n: 12,
    channels: 3,
    side: 2,
};

#[test]
fn handshake_bytes() {
    assert_eq!(encode_handshake(&GEOMETRY), fixture("handshake.bin"));
    assert_eq!(read_handshake(&mut Cursor::new(fixture("handshake.bin"))).unwrap(), GEOMETRY);
    assert_eq!(encode_handshake_reply(0), fixture("handshake_reply_ok.bin"));
    assert_eq!(encode_handshake_reply(1), fixture("handshake_reply_reject.bin"));
    assert_eq!(
        read_handshake_reply(&mut Cursor::new(fixture("handshake_reply_reject.bin"))).unwrap(),
        (1, 1)
    );
}

#[test]
fn request_bytes() {
    let req = Request {
        step: 37,
        sigma: 0.5,
        class_label: -1,
        payload: payload(),
    };
    assert_eq!(req.encode(), fixture("request.bin"));
    let back = Request::read(&mut Cursor::new(fixture("request.bin")), 12).unwrap().unwrap();
    assert_eq!((back.step, back.sigma, back.class_label), (37, 0.5, -1));
    assert_eq!(bits(&back.payload), bits(&payload()));

    let mut labelled = payload();
    labelled[11] = 255.0;
    let req = Request {
        step: 1000,
        sigma: 157.2,
        class_label: 207,
        payload: labelled,
    };
    assert_eq!(req.encode(), fixture("request_labelled.bin"));
}

#[test]
fn response_bytes() {
    let resp = Response::Prediction {
        status: 0,
        payload: payload(),
    };
    assert_eq!(resp.encode(), fixture("response.bin"));
    match Response::read(&mut Cursor::new(fixture("response.bin")), 12).unwrap() {
        Response::Prediction { status, payload: p } => {
            assert_eq!(status, 0);
            assert_eq!(bits(&p), bits(&payload()));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn error_frame_bytes() {
    let msg = "payload length mismatch: ünexpected".to_string();
    assert_eq!(Response::Error(msg.clone()).encode(), fixture("error.bin"));
    assert_eq!(
        Response::read(&mut Cursor::new(fixture("error.bin")), 12).unwrap(),
        Response::Error(msg)
    );
}

#[test]
fn echo_server_transcript() {
    let mut input = fixture("handshake.bin");
    input.extend(fixture("request.bin"));
    let mut output = Vec::new();
    assert_eq!(serve_echo(Cursor::new(input), &mut output, None).unwrap(), 1);
    let mut want = fixture("handshake_reply_ok.bin");
    want.extend(fixture("response.bin"));
    assert_eq!(output, want);
}

#[test]
fn echo_server_rejects_other_length() {
    let mut output = Vec::new();
    assert!(serve_echo(Cursor::new(fixture("handshake.bin")), &mut output, Some(13)).is_err());
    assert_eq!(output, fixture("handshake_reply_reject.bin"));
}

#[test]
fn noiseless_run_through_echo_is_consistent() {
    let shape = ImageShape::square(1, 8);
    let op = SvdOperator64::block_sr(shape, 2).unwrap();
    let x: Vec<f64> = (0..64).map(|i| ((i * 13) % 17) as f64 / 17.0).collect();
    let y = op.apply(&x).unwrap();
    let problem = Problem64::new(&op, y.clone(), 0.0).unwrap();
    let schedule = SigmaSchedule64::default_linear();
    let params = DdrmParams64::new(schedule.subsample(20).unwrap(), 5);

    let (c2s_r, c2s_w) = std::io::pipe().unwrap();
    let (s2c_r, s2c_w) = std::io::pipe().unwrap();
    let server = std::thread::spawn(move || serve_echo(c2s_r, s2c_w, Some(64)));
    let geometry = Geometry {
        n: 64,
        channels: 1,
        side: 8,
    };
    let mut client = BridgeClient::connect(s2c_r, c2s_w, geometry, Duration::from_secs(30)).unwrap();
    let out = ddrm::sampler::run(&problem, &mut client, &schedule, &params).unwrap();
    drop(client);
    assert_eq!(server.join().unwrap().unwrap(), 20);

    let hx = op.apply(&out).unwrap();
    let err = hx.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-5, "{err}");
}
