use std::ffi::{CStr, CString};
use std::ptr;

use dynamiq_ffi::*;

fn grads(n: usize, d: usize) -> Vec<Vec<f32>> {
    (0..n)
        .map(|w| (0..d).map(|k| (((k * 7 + w * 13) % 31) as f32 - 15.0) * 0.01).collect())
        .collect()
}

fn last_error() -> String {
    let p = dynamiq_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn allreduce_round_trip() {
    let g = grads(4, 4096);
    let ptrs: Vec<*const f32> = g.iter().map(|v| v.as_ptr()).collect();
    unsafe {
        let cfg = dynamiq_config_new();
        assert_eq!(dynamiq_config_set_seed(cfg, 9, 0), DynamiqStatus::Ok);
        assert_eq!(dynamiq_config_set_topology(cfg, DynamiqTopology::Butterfly), DynamiqStatus::Ok);
        let mut round = ptr::null_mut();
        assert_eq!(dynamiq_allreduce(cfg, ptrs.as_ptr(), 4, 4096, &mut round), DynamiqStatus::Ok);
        assert_eq!(dynamiq_round_len(round), 4096);
        let mut synced = vec![0f32; 4096];
        assert_eq!(dynamiq_round_synced(round, synced.as_mut_ptr(), synced.len()), DynamiqStatus::Ok);

        let exact: Vec<f64> = (0..4096).map(|k| g.iter().map(|w| w[k] as f64).sum()).collect();
        let mut v = 0.0;
        assert_eq!(dynamiq_vnmse(synced.as_ptr(), exact.as_ptr(), 4096, &mut v), DynamiqStatus::Ok);
        assert_eq!(v, dynamiq_round_vnmse(round));
        assert!(v > 0.0 && v < 0.05, "{v}");
        let bits = dynamiq_round_bits_per_coordinate(round);
        assert!(bits <= 5.0, "{bits}");
        let hash = CStr::from_ptr(dynamiq_round_traffic_hash(round)).to_str().unwrap().to_owned();
        assert_eq!(hash.len(), 64);

        let mut again = ptr::null_mut();
        assert_eq!(dynamiq_config_set_threaded(cfg, 1), DynamiqStatus::Ok);
        assert_eq!(dynamiq_allreduce(cfg, ptrs.as_ptr(), 4, 4096, &mut again), DynamiqStatus::Ok);
        assert_eq!(CStr::from_ptr(dynamiq_round_traffic_hash(again)).to_str().unwrap(), hash);

        dynamiq_round_free(again);
        dynamiq_round_free(round);
        dynamiq_config_free(cfg);
    }
}

#[test]
fn errors_are_reported() {
    let g = grads(3, 1024);
    let ptrs: Vec<*const f32> = g.iter().map(|v| v.as_ptr()).collect();
    unsafe {
        let cfg = dynamiq_config_new();
        dynamiq_config_set_budget(cfg, 1.0);
        let mut round = ptr::null_mut();
        assert_eq!(dynamiq_allreduce(cfg, ptrs.as_ptr(), 3, 1024, &mut round), DynamiqStatus::BudgetInfeasible);
        assert!(round.is_null());
        assert!(last_error().contains("budget"));

        dynamiq_config_set_budget(cfg, 5.0);
        dynamiq_config_set_topology(cfg, DynamiqTopology::Butterfly);
        assert_eq!(dynamiq_allreduce(cfg, ptrs.as_ptr(), 3, 1024, &mut round), DynamiqStatus::Config);
        assert_eq!(dynamiq_allreduce(ptr::null(), ptrs.as_ptr(), 3, 1024, &mut round), DynamiqStatus::NullPointer);
        assert!(last_error().contains("config"));
        dynamiq_config_free(cfg);

        let mut out = ptr::null_mut();
        let bad = CString::new(r#"{"group_size": 16, "nonsense": true}"#).unwrap();
        assert_eq!(dynamiq_config_from_json(bad.as_ptr(), &mut out), DynamiqStatus::Config);
        let good = CString::new(r#"{"bits_per_coordinate": 4.0, "topology": "butterfly"}"#).unwrap();
        assert_eq!(dynamiq_config_from_json(good.as_ptr(), &mut out), DynamiqStatus::Ok);
        assert!(dynamiq_last_error().is_null());
        dynamiq_config_free(out);

        let mut v = 0.0;
        let zero = [0.0f64; 4];
        assert_eq!(dynamiq_vnmse([1.0f32; 4].as_ptr(), zero.as_ptr(), 4, &mut v), DynamiqStatus::InvalidArgument);
        dynamiq_round_free(ptr::null_mut());
        assert!(dynamiq_round_vnmse(ptr::null()).is_nan());
    }
}

#[test]
fn allocation_respects_budget() {
    let norms: Vec<f32> = (0..64).map(|k| 1.5f32.powi(k % 20)).collect();
    let mut widths = vec![0u32; norms.len()];
    for fast in [0, 1] {
        let status = unsafe { dynamiq_allocate(norms.as_ptr(), norms.len(), 5.0, 16, 256, fast, widths.as_mut_ptr()) };
        assert_eq!(status, DynamiqStatus::Ok);
        assert!(widths.iter().all(|w| [2, 4, 8].contains(w)));
        // payload budget is 5 - 8/16 - 16/256 bits per entry
        let mean = widths.iter().sum::<u32>() as f64 / widths.len() as f64;
        assert!(mean <= 5.0 - 0.5625 + 1e-12, "{mean}");
        assert!(widths.windows(2).any(|p| p[0] != p[1]));
    }
    let status = unsafe { dynamiq_allocate(norms.as_ptr(), norms.len(), 5.0, 24, 256, 0, widths.as_mut_ptr()) };
    assert_eq!(status, DynamiqStatus::InvalidArgument);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/dynamiq.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|s| s.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for f in exports {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct DynamiqRound DynamiqRound;"));
}

#[test]
fn header_compiles_as_c() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let status = std::process::Command::new(std::env::var("CC").unwrap_or_else(|_| "cc".into()))
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(format!("{dir}/include"))
        .arg(format!("{dir}/tests/c/usage.c"))
        .status()
        .expect("a C compiler is needed to check the header");
    assert!(status.success());
}
