use std::ffi::CString;
use std::ptr;

use dgaug_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    unsafe { dgaug_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { std::ffi::CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn pixel_conversion() {
    let mut lab = [0.0f64; 3];
    let st = unsafe { dgaug_srgb_to_lab8([255u8, 0, 0].as_ptr(), lab.as_mut_ptr()) };
    assert_eq!(st, DgaugStatus::Ok);
    for (got, want) in lab.iter().zip([135.764, 208.092, 195.203]) {
        assert!((got - want).abs() < 0.05, "{got} vs {want}");
    }
    let mut rgb = [0u8; 3];
    assert_eq!(unsafe { dgaug_lab8_to_srgb(lab.as_ptr(), rgb.as_mut_ptr()) }, DgaugStatus::Ok);
    assert_eq!(rgb, [255, 0, 0]);
}

#[test]
fn null_pointers_are_reported() {
    let st = unsafe { dgaug_srgb_to_lab8(ptr::null(), ptr::null_mut()) };
    assert_eq!(st, DgaugStatus::NullPointer);
    assert_eq!(last_error(), "rgb is null");
}

#[test]
fn rica_through_handles() {
    let data: Vec<u8> = (0..4 * 4 * 3).map(|i| (i * 5) as u8).collect();
    let mut img = ptr::null_mut();
    assert_eq!(unsafe { dgaug_image_new(4, 4, data.as_ptr(), data.len(), &mut img) }, DgaugStatus::Ok);

    let mut params = DgaugRicaParams::default();
    assert_eq!(unsafe { dgaug_rica_sample(42, &mut params) }, DgaugStatus::Ok);
    let mut again = DgaugRicaParams::default();
    unsafe { dgaug_rica_sample(42, &mut again) };
    assert_eq!(params, again);

    let mut out = ptr::null_mut();
    assert_eq!(unsafe { dgaug_rica_apply(img, &params, DgaugRicaMode::Both, &mut out) }, DgaugStatus::Ok);
    let (mut w, mut h) = (0usize, 0usize);
    unsafe { dgaug_image_size(out, &mut w, &mut h) };
    assert_eq!((w, h), (4, 4));
    let mut buf = vec![0u8; 48];
    assert_eq!(unsafe { dgaug_image_read(out, buf.as_mut_ptr(), buf.len()) }, DgaugStatus::Ok);
    assert_eq!(unsafe { dgaug_image_read(out, buf.as_mut_ptr(), 10) }, DgaugStatus::Shape);
    unsafe {
        dgaug_image_free(out);
        dgaug_image_free(img);
    }

    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { dgaug_image_new(4, 4, data.as_ptr(), 5, &mut bad) }, DgaugStatus::Shape);
    assert!(bad.is_null());
}

#[test]
fn miou_values() {
    let truth = [0u8, 0, 0, 1];
    let pred = [0u8, 0, 0, 0];
    let mut m = 0.0;
    assert_eq!(unsafe { dgaug_miou(pred.as_ptr(), truth.as_ptr(), 4, 2, &mut m) }, DgaugStatus::Ok);
    assert_eq!(m, 0.375);
    let bad = [7u8, 0, 0, 0];
    assert_eq!(unsafe { dgaug_miou(bad.as_ptr(), truth.as_ptr(), 4, 2, &mut m) }, DgaugStatus::InvalidArgument);
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = dgaug::harness::Checkpoint::new(1, 2, 3);
    c.push(dgaug::harness::NamedArray {
        name: "w".into(),
        shape: vec![2, 2],
        data: vec![1.0, 2.0, 3.0, 4.0],
    });
    let path = dir.path().join("a.ckpt");
    c.save(&path).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();

    let mut h = ptr::null_mut();
    assert_eq!(unsafe { dgaug_checkpoint_load(cpath.as_ptr(), &mut h) }, DgaugStatus::Ok);
    let mut n = 0;
    unsafe { dgaug_checkpoint_len(h, &mut n) };
    assert_eq!(n, 1);
    let mut name = [0 as std::ffi::c_char; 16];
    let mut dims = [0u64; 4];
    let mut ndim = 0;
    let st = unsafe { dgaug_checkpoint_array_info(h, 0, name.as_mut_ptr(), 16, dims.as_mut_ptr(), 4, &mut ndim) };
    assert_eq!(st, DgaugStatus::Ok);
    assert_eq!((ndim, &dims[..2]), (2, &[2u64, 2][..]));
    let mut vals = [0f32; 4];
    unsafe { dgaug_checkpoint_array_read(h, 0, vals.as_mut_ptr(), 4) };
    assert_eq!(vals, [1.0, 2.0, 3.0, 4.0]);

    let copy = CString::new(dir.path().join("b.ckpt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { dgaug_checkpoint_save(h, copy.as_ptr()) }, DgaugStatus::Ok);
    unsafe { dgaug_checkpoint_free(h) };
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(dir.path().join("b.ckpt")).unwrap());

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, bytes).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { dgaug_checkpoint_load(cpath.as_ptr(), &mut h) }, DgaugStatus::Format);
    assert_eq!(last_error(), "bad magic");

    let missing = CString::new("/nonexistent/x.ckpt").unwrap();
    assert_eq!(unsafe { dgaug_checkpoint_load(missing.as_ptr(), &mut h) }, DgaugStatus::Io);
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/dgaug.h")).unwrap();
    for name in ["dgaug_last_error", "dgaug_rica_apply", "dgaug_checkpoint_load", "DGAUG_STATUS_OK", "typedef struct DgaugImage DgaugImage"] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
