use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use actchange::cli::cmd_gen_synth;
use actchange::eval::average_precision;
use actchange::model::{forward, predict_all_verbs, save_checkpoint, ModelConfig, ModelParams};
use actchange::ndnum::{Array, Rng, Stream};
use actchange::synth::SynthSpec;
use actchange_ffi::*;

fn tiny() -> ModelConfig {
    ModelConfig {
        d_seg: 6,
        d_text: 5,
        embed: 8,
        heads: 2,
        mlp_hidden: 7,
        mlp_hidden_layers: 1,
        dropout: 0.1,
        num_adverbs: 4,
    }
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(actchange_last_error()) }
        .to_str()
        .unwrap()
        .to_string()
}

struct Fixture {
    _dir: tempfile::TempDir,
    params: ModelParams<f32>,
    model: *mut ActModel,
}

impl Drop for Fixture {
    fn drop(&mut self) {
        unsafe { actchange_model_free(self.model) };
    }
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let params = ModelParams::<f32>::init(&tiny(), &mut Rng::new(3, Stream::Init)).unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&params, &path).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { actchange_model_load(cpath(&path).as_ptr(), &mut model) },
        ActStatus::Ok
    );
    assert!(!model.is_null());
    Fixture {
        _dir: dir,
        params,
        model,
    }
}

fn video(rng: &mut Rng, t: usize) -> Vec<f32> {
    (0..t * 6).map(|_| rng.normal() as f32).collect()
}

#[test]
fn load_reports_dims() {
    let f = fixture();
    let mut dims = ActModelDims {
        d_seg: 0,
        d_text: 0,
        embed: 0,
        heads: 0,
        mlp_hidden: 0,
        mlp_hidden_layers: 0,
        num_adverbs: 0,
    };
    assert_eq!(unsafe { actchange_model_dims(f.model, &mut dims) }, ActStatus::Ok);
    assert_eq!(
        (dims.d_seg, dims.d_text, dims.embed, dims.heads, dims.num_adverbs),
        (6, 5, 8, 2, 4)
    );
}

#[test]
fn forward_matches_library() {
    let f = fixture();
    let mut rng = Rng::new(1, Stream::Test);
    let seg = video(&mut rng, 3);
    let mask = [1u8, 0, 1];
    let q: Vec<f32> = (0..5).map(|_| rng.normal() as f32).collect();
    let mut out = [0f32; 4];
    let s = unsafe { actchange_model_forward(f.model, seg.as_ptr(), 3, mask.as_ptr(), q.as_ptr(), out.as_mut_ptr()) };
    assert_eq!(s, ActStatus::Ok);
    let want = forward(
        &f.params,
        &Array::matrix(3, 6, seg.clone()).unwrap(),
        &[true, false, true],
        &q,
        None,
    )
    .unwrap();
    assert_eq!(&out[..], want.predictions.data());

    let mut all_valid = [0f32; 4];
    let s = unsafe {
        actchange_model_forward(
            f.model,
            seg.as_ptr(),
            3,
            ptr::null(),
            q.as_ptr(),
            all_valid.as_mut_ptr(),
        )
    };
    assert_eq!(s, ActStatus::Ok);
    let want = forward(&f.params, &Array::matrix(3, 6, seg).unwrap(), &[true; 3], &q, None).unwrap();
    assert_eq!(&all_valid[..], want.predictions.data());
}

#[test]
fn predict_all_verbs_matches_library() {
    let f = fixture();
    let mut rng = Rng::new(2, Stream::Test);
    let seg = video(&mut rng, 4);
    let queries: Vec<f32> = (0..3 * 5).map(|_| rng.normal() as f32).collect();
    let mut out = vec![0f32; 3 * 4];
    let s = unsafe {
        actchange_model_predict_all_verbs(
            f.model,
            seg.as_ptr(),
            4,
            ptr::null(),
            queries.as_ptr(),
            3,
            out.as_mut_ptr(),
        )
    };
    assert_eq!(s, ActStatus::Ok);
    let want = predict_all_verbs(
        &f.params,
        &Array::matrix(4, 6, seg).unwrap(),
        &[true; 4],
        &Array::matrix(3, 5, queries).unwrap(),
    )
    .unwrap();
    assert_eq!(out, want.data());
}

#[test]
fn errors_set_status_and_message() {
    let f = fixture();
    let mut out = [0f32; 4];
    let q = [0f32; 5];
    let s = unsafe { actchange_model_forward(f.model, ptr::null(), 2, ptr::null(), q.as_ptr(), out.as_mut_ptr()) };
    assert_eq!(s, ActStatus::NullPointer);
    assert!(last_error().contains("segments"));

    let seg = [0f32; 6];
    let mask = [0u8];
    let s = unsafe { actchange_model_forward(f.model, seg.as_ptr(), 1, mask.as_ptr(), q.as_ptr(), out.as_mut_ptr()) };
    assert_ne!(s, ActStatus::Ok);
    assert!(!last_error().is_empty());

    let s = unsafe { actchange_model_forward(f.model, seg.as_ptr(), 0, ptr::null(), q.as_ptr(), out.as_mut_ptr()) };
    assert_eq!(s, ActStatus::InvalidArgument);

    let mut model = ptr::null_mut();
    let missing = CString::new("/nonexistent/m.ckpt").unwrap();
    let s = unsafe { actchange_model_load(missing.as_ptr(), &mut model) };
    assert!(matches!(s, ActStatus::Io | ActStatus::Load), "{s:?}");
    assert!(model.is_null());
    assert!(last_error().contains("nonexistent"));

    unsafe { actchange_model_free(ptr::null_mut()) };
}

#[test]
fn garbage_checkpoint_is_a_load_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ckpt");
    std::fs::write(&path, b"not a checkpoint").unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { actchange_model_load(cpath(&path).as_ptr(), &mut model) },
        ActStatus::Load
    );
}

#[test]
fn count_params_default_mlp() {
    let d = ModelConfig::default();
    let dims = ActModelDims {
        d_seg: d.d_seg,
        d_text: d.d_text,
        embed: d.embed,
        heads: d.heads,
        mlp_hidden: d.mlp_hidden,
        mlp_hidden_layers: d.mlp_hidden_layers,
        num_adverbs: d.num_adverbs,
    };
    let mut out = ActParamCount {
        attention: 0,
        mlp: 0,
        total: 0,
    };
    assert_eq!(unsafe { actchange_count_params(&dims, &mut out) }, ActStatus::Ok);
    assert_eq!(out.mlp, 267_786);
    assert_eq!(out.total, out.mlp + out.attention);

    let bad = ActModelDims { heads: 3, ..dims };
    assert_eq!(unsafe { actchange_count_params(&bad, &mut out) }, ActStatus::Config);
}

#[test]
fn average_precision_matches_library() {
    let scores = [0.9, 0.1, 0.5, 0.5, 0.3];
    let rel = [0u8, 1, 1, 0, 1];
    let mut ap = 0.0;
    assert_eq!(
        unsafe { actchange_average_precision(scores.as_ptr(), rel.as_ptr(), 5, &mut ap) },
        ActStatus::Ok
    );
    let want = average_precision(&scores, &rel.map(|r| r != 0)).unwrap();
    assert_eq!(ap, want);

    let none = [0u8; 5];
    let s = unsafe { actchange_average_precision(scores.as_ptr(), none.as_ptr(), 5, &mut ap) };
    assert_eq!(s, ActStatus::NoPositives);
}

#[test]
fn delta_by_hand() {
    let phrase = [3.0f32, 0.0];
    let contrast = [0.0f32, 4.0];
    let verb = [1.0f32, 0.0];
    let adverb = [1.0f32, 1.0];
    let (mut d, mut delta) = (0.0, 0.0);
    let s = unsafe {
        actchange_delta(
            phrase.as_ptr(),
            contrast.as_ptr(),
            verb.as_ptr(),
            adverb.as_ptr(),
            2,
            &mut d,
            &mut delta,
        )
    };
    assert_eq!(s, ActStatus::Ok);
    assert!((d - 5.0).abs() < 1e-12);
    assert!((delta - 5.0 / 2f64.sqrt()).abs() < 1e-12);

    let zero = [0f32; 2];
    let s = unsafe {
        actchange_delta(
            phrase.as_ptr(),
            contrast.as_ptr(),
            zero.as_ptr(),
            adverb.as_ptr(),
            2,
            &mut d,
            &mut delta,
        )
    };
    assert_eq!(s, ActStatus::Degenerate);
}

#[test]
fn validate_synthetic_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        verbs: 2,
        adverbs: 4,
        t_min: 2,
        t_max: 4,
        n_train: 20,
        n_test: 10,
        d_seg: 8,
        d_pool: 4,
        d_text: 6,
        ..SynthSpec::default()
    };
    cmd_gen_synth(&spec, dir.path(), false).unwrap();
    let mut out = ActCorpusSummary::default();
    let s = unsafe { actchange_validate_corpus(cpath(dir.path()).as_ptr(), ptr::null(), &mut out) };
    assert_eq!(s, ActStatus::Ok, "{}", last_error());
    assert_eq!(
        (out.videos, out.train, out.test, out.d_seg, out.d_pool, out.d_text),
        (30, 20, 10, 8, 4, 6)
    );
    assert!(out.antonyms);

    let features = dir.path().join("features.bin");
    let mut bytes = std::fs::read(&features).unwrap();
    bytes[0] ^= 0xff;
    std::fs::write(&features, bytes).unwrap();
    let s = unsafe { actchange_validate_corpus(cpath(dir.path()).as_ptr(), ptr::null(), &mut out) };
    assert_eq!(s, ActStatus::Load);
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(actchange_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
