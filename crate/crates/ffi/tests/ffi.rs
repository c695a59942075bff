use pcdbn_ffi::*;
use std::ffi::CString;
use std::ptr;

fn last_error() -> String {
    let mut buf = vec![0u8; 256];
    let n = unsafe { pcdbn_last_error(buf.as_mut_ptr() as *mut _, buf.len()) };
    String::from_utf8_lossy(&buf[..n.min(255)]).into_owned()
}

#[test]
fn chebyshev_coefficients_through_the_abi() {
    let mut out = [0.0; 4];
    let st = unsafe { pcdbn_chebyshev_coefficients(3, out.as_mut_ptr(), out.len()) };
    assert_eq!(st, PcdbnStatus::Ok);
    // the logistic minus 1/2 is odd, so the even coefficients past α_0 vanish
    assert!((out[0] - 0.5).abs() < 1e-9);
    assert!(out[2].abs() < 1e-9);
    assert!(out[1] > 0.2 && out[1] < 0.25);
    let st = unsafe { pcdbn_chebyshev_coefficients(7, out.as_mut_ptr(), out.len()) };
    assert_eq!(st, PcdbnStatus::BufferTooSmall);
    assert!(last_error().contains("8"));
    let st = unsafe { pcdbn_chebyshev_coefficients(3, ptr::null_mut(), 4) };
    assert_eq!(st, PcdbnStatus::NullPointer);
}

#[test]
fn laplace_is_seeded_and_validated() {
    let mut a = [0.0; 16];
    let mut b = [0.0; 16];
    unsafe {
        assert_eq!(pcdbn_laplace(2.0, 9, a.as_mut_ptr(), a.len()), PcdbnStatus::Ok);
        assert_eq!(pcdbn_laplace(2.0, 9, b.as_mut_ptr(), b.len()), PcdbnStatus::Ok);
        assert_eq!(pcdbn_laplace(-1.0, 9, b.as_mut_ptr(), b.len()), PcdbnStatus::InvalidArgument);
    }
    assert_eq!(a, b);
    let (mut d, mut p) = (0.0, 0.0);
    assert_eq!(unsafe { pcdbn_noise_test(1.0, 2.0, 20_000, 3, &mut d, &mut p) }, PcdbnStatus::Ok);
    assert!(d > 0.0 && d < 0.05 && p > 0.0 && p <= 1.0);
}

#[test]
fn train_save_load_predict() {
    let dir = tempfile::tempdir().unwrap();
    // 4x4 images: class 1 has a bright left half
    let mut csv = String::from((0..16).map(|i| format!("p{i}")).collect::<Vec<_>>().join(","));
    csv.push_str(",label\n");
    for t in 0..40 {
        let y = t % 2;
        let row: Vec<String> =
            (0..16).map(|i| if y == 1 && i % 4 < 2 { "1".into() } else { format!("{}", (t % 5) as f64 * 0.02) }).collect();
        csv.push_str(&format!("{},{y}\n", row.join(",")));
    }
    let data = dir.path().join("toy.csv");
    std::fs::write(&data, csv).unwrap();
    let conf = dir.path().join("toy.conf");
    std::fs::write(
        &conf,
        format!(
            "train_csv = {}\nlayers = 2/2/1/chebyshev3\nreadout = grid3\nreadout_bias = true\nepsilon = 1000000\nepochs = 5\nsoftmax_epochs = 500\n",
            data.display()
        ),
    )
    .unwrap();
    let conf_c = CString::new(conf.to_str().unwrap()).unwrap();
    let mut model: *mut PcdbnModel = ptr::null_mut();
    assert_eq!(unsafe { pcdbn_train(conf_c.as_ptr(), 4, &mut model) }, PcdbnStatus::Ok, "{}", last_error());
    let path = CString::new(dir.path().join("m.bin").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { pcdbn_model_save(model, path.as_ptr()) }, PcdbnStatus::Ok);
    unsafe { pcdbn_model_free(model) };

    let mut loaded: *mut PcdbnModel = ptr::null_mut();
    assert_eq!(unsafe { pcdbn_model_load(path.as_ptr(), &mut loaded) }, PcdbnStatus::Ok);
    let (mut side, mut eps) = (0usize, 0.0);
    unsafe {
        assert_eq!(pcdbn_model_input_side(loaded, &mut side), PcdbnStatus::Ok);
        assert_eq!(pcdbn_model_epsilon_spent(loaded, &mut eps), PcdbnStatus::Ok);
    }
    assert_eq!(side, 4);
    assert_eq!(eps, 1e6);
    let bright: Vec<f64> = (0..16).map(|i| if i % 4 < 2 { 1.0 } else { 0.0 }).collect();
    let dark = vec![0.0; 16];
    let (mut l1, mut l0, mut s) = (9usize, 9usize, 0.0);
    unsafe {
        assert_eq!(pcdbn_model_predict(loaded, bright.as_ptr(), 16, &mut l1, &mut s), PcdbnStatus::Ok);
        assert_eq!(pcdbn_model_predict(loaded, dark.as_ptr(), 16, &mut l0, ptr::null_mut()), PcdbnStatus::Ok);
        assert_eq!(pcdbn_model_predict(loaded, dark.as_ptr(), 15, &mut l0, ptr::null_mut()), PcdbnStatus::InvalidArgument);
        pcdbn_model_free(loaded);
    }
    assert_eq!((l1, l0), (1, 0));
    assert!(s > 0.5);
}

#[test]
fn load_errors_are_reported() {
    let missing = CString::new("/nonexistent/model.bin").unwrap();
    let mut m: *mut PcdbnModel = ptr::null_mut();
    assert_eq!(unsafe { pcdbn_model_load(missing.as_ptr(), &mut m) }, PcdbnStatus::DataError);
    assert!(m.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { pcdbn_model_load(ptr::null(), &mut m) }, PcdbnStatus::NullPointer);
    unsafe { pcdbn_model_free(ptr::null_mut()) };
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/pcdbn.h");
    let text = std::fs::read_to_string(header).unwrap();
    for f in ["pcdbn_model_load", "pcdbn_model_predict", "pcdbn_model_free", "pcdbn_last_error", "PCDBN_STATUS_OK"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let Ok(out) = std::process::Command::new("cc").args(["-fsyntax-only", "-x", "c", header]).output() else {
        eprintln!("no C compiler; skipping syntax check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
