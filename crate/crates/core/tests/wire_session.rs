use proptest::prelude::*;
use radfield_core::camera::orbit_trajectory;
use radfield_core::codec::{decode_frame, encode_frame};
use radfield_core::render::render_frame;
use radfield_core::wire::{
    FieldReference, Receiver, ReceiverEvent, Sender, SessionError, SessionMode, StreamMessage, POSE_BODY_LEN,
};
use radfield_core::{level_resolutions, Aabb, Frame, Intrinsics, MultiresField, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn field(seed: u64) -> MultiresField {
    let mut f = MultiresField::zeros(level_resolutions(4, 8, 2).unwrap(), 1 << 10, Aabb::unit()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    f.params_mut().iter_mut().for_each(|p| *p = rng.random_range(-1.5..1.5));
    f.quantize_to_f32();
    f
}

/// Runs a full session through encoded bytes; returns rebuilt frames and total wire bytes.
fn session(tx_field: &MultiresField, rx_field: &MultiresField, mode: SessionMode, q: u8, frames: &[Frame]) -> Result<(Vec<Frame>, Vec<Frame>, usize), SessionError> {
    let (w, h) = (frames[0].width(), frames[0].height());
    let poses = orbit_trajectory(Vec3::ZERO, 2.5, 0.8, frames.len(), Intrinsics::from_fov_x(w, h, 0.9)).unwrap();
    let tx_ref = FieldReference::new(tx_field, 16);
    let rx_ref = FieldReference::new(rx_field, 16);
    let mut tx = Sender::new(&tx_ref, mode, w, h, q)?;
    let mut rx = Receiver::new(&rx_ref, mode);
    let mut wire = Vec::new();
    let mut sender_side = Vec::new();
    wire.extend(tx.hello().encode());
    for (i, (f, p)) in frames.iter().zip(&poses).enumerate() {
        let (msgs, rebuilt) = tx.frame(i as u32, f, p, 0.0)?;
        sender_side.push(rebuilt);
        for m in msgs {
            wire.extend(m.encode());
        }
    }
    wire.extend(tx.end().encode());
    let mut out = Vec::new();
    let mut at = 0;
    while at < wire.len() {
        let (msg, used) = StreamMessage::decode(&wire[at..]).unwrap();
        at += used;
        if let ReceiverEvent::Frame { frame, .. } = rx.handle(msg)? {
            out.push(frame);
        }
    }
    assert!(rx.is_done());
    Ok((out, sender_side, wire.len()))
}

fn frames(n: usize, seed: u64) -> Vec<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| Frame::from_vec(12, 10, 3, (0..360).map(|_| rng.random()).collect()).unwrap()).collect()
}

#[test]
fn lossless_session_is_bit_exact() {
    let f = field(1);
    let fs = frames(10, 2);
    let (rx, tx, _) = session(&f, &f, SessionMode::Reference, 1, &fs).unwrap();
    assert_eq!(rx, fs);
    assert_eq!(tx, fs);
}

#[test]
fn lossy_session_matches_codec_decode() {
    let f = field(1);
    let fs = frames(4, 3);
    let (rx, tx, _) = session(&f, &f, SessionMode::Reference, 8, &fs).unwrap();
    let poses = orbit_trajectory(Vec3::ZERO, 2.5, 0.8, 4, Intrinsics::from_fov_x(12, 10, 0.9)).unwrap();
    for ((frame, got), pose) in fs.iter().zip(&rx).zip(&poses) {
        let reference = render_frame(&f, &pose.quantized_f32().unwrap(), 12, 10, 16).unwrap().rgb.to_frame();
        let want = decode_frame(&encode_frame(frame, &reference, 8).unwrap(), &reference, 8).unwrap();
        assert_eq!(got, &want);
    }
    assert_eq!(rx, tx);
}

#[test]
fn pose_frame_fits_in_a_kilobyte() {
    let m = StreamMessage::PoseFrame { frame_idx: 0, time: 0.0, pose: [0.0; 16], intrinsics: [0.0; 4] };
    assert_eq!(m.encode().len(), 1 + 4 + POSE_BODY_LEN + 4);
    assert!(m.encode().len() < 1024);
}

#[test]
fn intra_session_round_trips() {
    let f = field(1);
    let fs = frames(3, 4);
    let (rx, _, _) = session(&f, &f, SessionMode::Intra, 1, &fs).unwrap();
    assert_eq!(rx, fs);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn handshake_rejects_perturbed_model(idx in any::<prop::sample::Index>(), bit in 0u32..23) {
        let f = field(5);
        let mut g = f.clone();
        let i = idx.index(g.params().len());
        let v = g.params()[i] as f32;
        g.params_mut()[i] = f32::from_bits(v.to_bits() ^ (1 << bit)) as f64;
        prop_assert_ne!(f.model_id(), g.model_id());
        let r = session(&f, &g, SessionMode::Reference, 1, &frames(1, 0));
        prop_assert!(matches!(r, Err(SessionError::ModelMismatch)));
    }
}
