use std::path::Path;

use cftle::fieldfile::{decode_field, encode_field, read_field, write_field, FieldHeader};
use cftle::policyfile::{decode_policy, encode_policy, read_policy, write_policy};
use cftle_core::policy::{Generator, PolicyGrid, PolicyMeta};
use cftle_core::ocp::CostWeights;
use cftle_core::{DomainBox, GridSpec, ScalarField, Vec2};
use proptest::prelude::*;

fn grid(nx: usize, ny: usize) -> GridSpec {
    GridSpec::new(DomainBox::new(-1.0, 2.5, 0.1, 0.7).unwrap(), nx, ny).unwrap()
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn policy(u: Vec2) -> PolicyGrid {
    let g = GridSpec::new_coarse(DomainBox::double_gyre(), 4, 3).unwrap();
    let meta = PolicyMeta {
        weights: Some(CostWeights::new(1.0, 80.0).unwrap()),
        t_horizon: Some(3.0),
        goal: Some(Vec2::new(0.5, 0.5)),
        u_max: 0.1,
        flow: "zero".into(),
        generator: Generator::Mpc,
    };
    let controls = (0..24).map(|k| Vec2::new(u.x * (k % 3) as f64 / 2.0, -u.y * (k % 5) as f64 / 4.0)).collect();
    PolicyGrid::new(g, 0.25, 0.1, 2, controls, meta, None).unwrap()
}

#[test]
fn field_round_trip_preserves_special_values() {
    let mut f = ScalarField::from_fn(grid(5, 4), |p| (p.x * 7.3).sin() / 3.0 + p.y);
    f.values[0] = f64::NAN;
    f.values[1] = f64::NEG_INFINITY;
    f.values[2] = -0.0;
    f.values[3] = f64::MIN_POSITIVE / 8.0;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.field");
    let header = FieldHeader::new("ftle", &f, Some(0.0), Some(-15.0), "abc");
    assert_eq!(header.invalid_count, 2);
    write_field(&path, &header, &f).unwrap();
    let (h2, f2) = read_field(&path).unwrap();
    assert_eq!(h2, header);
    assert_eq!(f2.grid, f.grid);
    assert_eq!(bits(&f2.values), bits(&f.values));
    let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(leftovers.len(), 1);
}

#[test]
fn field_layout_is_header_marker_payload() {
    let f = ScalarField::from_fn(grid(3, 3), |p| p.x);
    let bytes = encode_field(&FieldHeader::new("q", &f, None, None, "h"), &f);
    let marker = b"\n---BINARY---\n";
    let pos = bytes.windows(marker.len()).position(|w| w == marker).unwrap();
    assert!(!bytes[..pos].contains(&b'\n'));
    let payload = &bytes[pos + marker.len()..];
    assert_eq!(payload.len(), 9 * 8);
    // x fastest: second value is node (1, 0).
    assert_eq!(f64::from_le_bytes(payload[8..16].try_into().unwrap()), f.grid.x(1));
}

#[test]
fn malformed_field_files_rejected() {
    let f = ScalarField::from_fn(grid(3, 3), |p| p.y);
    let good = encode_field(&FieldHeader::new("q", &f, None, None, "h"), &f);
    let p = Path::new("x.field");
    let err = |b: &[u8]| decode_field(p, b).unwrap_err().to_string();

    assert!(err(&good[..good.len() - 8]).contains("payload holds 8 values"));
    assert!(err(&good[..good.len() - 3]).contains("whole number"));
    assert!(err(b"{\"format_version\": 1}").contains("marker"));
    let mut broken = good.clone();
    broken[2] = b'#';
    assert!(err(&broken).contains("malformed field header"));
    let text = String::from_utf8_lossy(&good).replace("\"nx\":3", "\"nx\":4");
    assert!(err(text.as_bytes()).contains("payload"));
    assert_eq!(decode_field(p, &broken).unwrap_err().exit_code(), 4);
}

#[test]
fn policy_round_trip_bit_exact() {
    let p = policy(Vec2::new(0.1, 0.07)).with_period(0.1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.pol");
    write_policy(&path, &p).unwrap();
    let q = read_policy(&path).unwrap();
    assert_eq!(q, p);
    let a: Vec<u64> = p.controls.iter().flat_map(|u| [u.x.to_bits(), u.y.to_bits()]).collect();
    let b: Vec<u64> = q.controls.iter().flat_map(|u| [u.x.to_bits(), u.y.to_bits()]).collect();
    assert_eq!(a, b);
}

#[test]
fn policy_payload_order_is_time_y_x_components() {
    let p = policy(Vec2::new(0.1, 0.1));
    let bytes = encode_policy(&p);
    let marker = b"\n---BINARY---\n";
    let pos = bytes.windows(marker.len()).position(|w| w == marker).unwrap() + marker.len();
    let vals: Vec<f64> = bytes[pos..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    assert_eq!(vals.len(), 2 * 2 * 12);
    let m = p.grid.len();
    assert_eq!(vals[2 * (m + p.grid.index(2, 1))], p.at(1, 2, 1).x);
    assert_eq!(vals[2 * (m + p.grid.index(2, 1)) + 1], p.at(1, 2, 1).y);
}

#[test]
fn policy_validation_on_load() {
    let p = policy(Vec2::new(0.1, 0.1));
    let good = encode_policy(&p);
    let path = Path::new("p.pol");
    let text = String::from_utf8_lossy(&good).into_owned();
    let header_end = text.find("\n---BINARY---\n").unwrap();
    let payload_at = header_end + "\n---BINARY---\n".len();

    let shrunk = text[..header_end].replace("\"u_max\":0.1", "\"u_max\":0.01");
    let mut b = shrunk.into_bytes();
    b.extend_from_slice(&good[header_end..]);
    let msg = decode_policy(path, &b).unwrap_err().to_string();
    assert!(msg.contains("exceeds bound"), "{msg}");

    let mut nan = good.clone();
    nan[payload_at + 8..payload_at + 16].copy_from_slice(&f64::NAN.to_le_bytes());
    assert!(decode_policy(path, &nan).unwrap_err().to_string().contains("non-finite"));

    let msg = decode_policy(path, &good[..good.len() - 16]).unwrap_err().to_string();
    assert!(msg.contains("payload holds"), "{msg}");

    let mut unknown = text[..header_end].replace("\"generator\":\"mpc\"", "\"generator\":\"rl\"").into_bytes();
    unknown.extend_from_slice(&good[header_end..]);
    assert!(decode_policy(path, &unknown).unwrap_err().to_string().contains("generator"));

    assert!(read_policy(Path::new("/nonexistent/policy.pol")).is_err());
}

proptest! {
    #[test]
    fn field_round_trip_arbitrary_bits(raw in proptest::collection::vec(any::<u64>(), 12)) {
        let values: Vec<f64> = raw.iter().map(|&b| f64::from_bits(b)).collect();
        let f = ScalarField::new(grid(4, 3), values).unwrap();
        let bytes = encode_field(&FieldHeader::new("x", &f, Some(1.5), None, ""), &f);
        let (_, g) = decode_field(Path::new("m"), &bytes).unwrap();
        prop_assert_eq!(bits(&g.values), raw);
    }

    #[test]
    fn policy_round_trip_arbitrary(vals in proptest::collection::vec(-0.1..=0.1f64, 48), t_start in -20.0..20.0f64, dt in 0.01..2.0f64) {
        let g = GridSpec::new_coarse(DomainBox::new(0.0, 3.3, -1.0, 1.0).unwrap(), 4, 3).unwrap();
        let meta = PolicyMeta { weights: None, t_horizon: None, goal: None, u_max: 0.1, flow: "zero".into(), generator: Generator::External };
        let controls = vals.chunks(2).map(|c| Vec2::new(c[0], c[1])).collect();
        let p = PolicyGrid::new(g, t_start, dt, 2, controls, meta, None).unwrap();
        let q = decode_policy(Path::new("m"), &encode_policy(&p)).unwrap();
        prop_assert_eq!(q, p);
    }
}
