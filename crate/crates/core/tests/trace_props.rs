#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;
use surflink::trace::{
    align, downsample_imu, hop_size, normalize, parse_imu_csv, parse_rssi_csv, AlignedSeries, Channel,
    ImuSample, RssiSample, TraceError,
};

fn imu_ramp(n: usize) -> Vec<ImuSample> {
    (0..n)
        .map(|k| ImuSample {
            t_ms: 100 * k as i64,
            accel: [k as f64, (k as f64 * 0.7).sin(), 1.0 / (k as f64 + 1.0)],
            gyro: None,
        })
        .collect()
}

/// Straightforward windower: slide a window starting at 0 by `hop` while it fits.
fn brute_windows(samples: &[ImuSample], window: usize, hop: usize) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    let mut start = 0;
    while start + window <= samples.len() {
        let mut m = [0.0; 3];
        for s in &samples[start..start + window] {
            for i in 0..3 {
                m[i] += s.accel[i] / window as f64;
            }
        }
        out.push(m);
        start += hop;
    }
    out
}

proptest! {
    #[test]
    fn downsample_matches_brute_force(n in 1usize..200, window in 1usize..25, overlap in 0.0f64..0.95) {
        let samples = imu_ramp(n);
        let Ok(hop) = hop_size(window, overlap) else { return Ok(()); };
        let got = downsample_imu(&samples, window, overlap).unwrap();
        let want = brute_windows(&samples, window, hop);
        let expected_len = if n < window { 0 } else { (n - window) / hop + 1 };
        prop_assert_eq!(got.len(), expected_len);
        prop_assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            for i in 0..3 {
                prop_assert!((g.accel[i] - w[i]).abs() <= 1e-12 * (1.0 + w[i].abs()));
            }
        }
    }

    #[test]
    fn normalization_bounds_and_round_trip(
        rows in prop::collection::vec((-120.0f64..-20.0, prop::array::uniform3(-20.0f64..20.0)), 2..80)
    ) {
        let r: Vec<f64> = rows.iter().map(|x| x.0).collect();
        let a: Vec<[f64; 3]> = rows.iter().map(|x| x.1).collect();
        let t = (0..rows.len() as i64).map(|k| 10 * k).collect();
        let raw = AlignedSeries::new(t, r, a).unwrap();
        let Ok((norm, params)) = normalize(&raw) else {
            // only a constant RSSI channel may fail
            prop_assert!(raw.rssi().iter().all(|&v| v == raw.rssi()[0]));
            return Ok(());
        };
        for k in 0..raw.len() {
            let rv = norm.rssi()[k];
            prop_assert!((0.0..=1.0).contains(&rv));
            let back = params.denormalize(rv, Channel::Rssi);
            let orig = raw.rssi()[k];
            prop_assert!((back - orig).abs() <= 1e-12 * orig.abs().max(1.0) * 4.0);
            for (i, c) in [Channel::Ax, Channel::Ay, Channel::Az].into_iter().enumerate() {
                let v = norm.accel()[k][i];
                prop_assert!((0.0..=1.0).contains(&v));
                if !params.is_dropped(c) {
                    let back = params.denormalize(v, c);
                    let orig = raw.accel()[k][i];
                    prop_assert!((back - orig).abs() <= 4e-12 * orig.abs().max(20.0));
                }
            }
        }
    }

    #[test]
    fn alignment_respects_tolerance(
        imu_steps in prop::collection::vec(1i64..150, 1..60),
        rssi_steps in prop::collection::vec(1i64..400, 1..40),
        rssi_offset in -200i64..200,
        tol in 0i64..120,
    ) {
        let mut t = 0;
        let imu: Vec<ImuSample> = imu_steps.iter().enumerate().map(|(i, s)| {
            t += s;
            ImuSample { t_ms: t, accel: [i as f64, 0.0, 0.0], gyro: None }
        }).collect();
        let mut t = rssi_offset;
        let rssi: Vec<RssiSample> = rssi_steps.iter().enumerate().map(|(j, s)| {
            t += s;
            RssiSample { t_ms: t, rssi_dbm: -60.0, seq: j as u64, tx_dbm: None }
        }).collect();
        match align(&rssi, &imu, tol) {
            Ok(al) => {
                prop_assert_eq!(al.paired + al.dropped, rssi.len());
                prop_assert_eq!(al.series.len(), al.paired);
                let mut used = std::collections::HashSet::new();
                for (tr, acc) in al.series.t_ms().iter().zip(al.series.accel()) {
                    let i = acc[0] as usize;
                    prop_assert!((imu[i].t_ms - tr).abs() <= tol);
                    prop_assert!(used.insert(i), "imu sample {} paired twice", i);
                }
                let again = align(&rssi, &imu, tol).unwrap();
                prop_assert_eq!(again.series, al.series);
            }
            Err(TraceError::NoOverlap { .. }) => {
                // no rssi sample has any imu sample in range
                for r in &rssi {
                    prop_assert!(imu.iter().all(|s| (s.t_ms - r.t_ms).abs() > tol));
                }
            }
            // a single pair cannot form a lag-1 series
            Err(TraceError::SeriesTooShort { len: 1, .. }) => {}
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Corruption {
    None,
    NanField,
    Text,
    MissingField,
    OutOfRange,
}

fn corruption() -> impl Strategy<Value = Corruption> {
    prop_oneof![
        8 => Just(Corruption::None),
        1 => Just(Corruption::NanField),
        1 => Just(Corruption::Text),
        1 => Just(Corruption::MissingField),
        1 => Just(Corruption::OutOfRange),
    ]
}

proptest! {
    #[test]
    fn rssi_parser_rejects_exactly_bad_rows(
        rows in prop::collection::vec((-149.0f64..29.0, corruption()), 1..30)
    ) {
        let mut text = String::from("t_ms,rssi_dbm,seq\n");
        let mut first_bad = None;
        for (i, (rssi, c)) in rows.iter().enumerate() {
            let line = match c {
                Corruption::None => format!("{},{rssi},{i}\n", 100 * i),
                Corruption::NanField => format!("{},NaN,{i}\n", 100 * i),
                Corruption::Text => format!("{},loud,{i}\n", 100 * i),
                Corruption::MissingField => format!("{},{rssi}\n", 100 * i),
                Corruption::OutOfRange => format!("{},{},{i}\n", 100 * i, rssi - 200.0),
            };
            if !matches!(c, Corruption::None) && first_bad.is_none() {
                first_bad = Some(i as u64 + 2);
            }
            text.push_str(&line);
        }
        match (parse_rssi_csv(text.as_bytes()), first_bad) {
            (Ok(samples), None) => {
                prop_assert_eq!(samples.len(), rows.len());
                for (s, (r, _)) in samples.iter().zip(&rows) {
                    prop_assert_eq!(s.rssi_dbm, *r);
                }
            }
            (Err(TraceError::MalformedRow { row, .. }), Some(bad)) => prop_assert_eq!(row, bad),
            (other, bad) => prop_assert!(false, "got {:?}, first bad row {:?}", other.map(|s| s.len()), bad),
        }
    }

    #[test]
    fn imu_parser_rejects_exactly_bad_rows(
        rows in prop::collection::vec((prop::array::uniform3(-50.0f64..50.0), corruption()), 1..30)
    ) {
        let mut text = String::from("t_ms,ax,ay,az\r\n");
        let mut first_bad = None;
        for (i, (a, c)) in rows.iter().enumerate() {
            let line = match c {
                // out-of-range does not apply to acceleration; keep the row valid
                Corruption::None | Corruption::OutOfRange => format!("{},{},{},{}\r\n", 100 * i, a[0], a[1], a[2]),
                Corruption::NanField => format!("{},{},nan,{}\r\n", 100 * i, a[0], a[2]),
                Corruption::Text => format!("{},{},{},x\r\n", 100 * i, a[0], a[1]),
                Corruption::MissingField => format!("{},{},{}\r\n", 100 * i, a[0], a[1]),
            };
            if matches!(c, Corruption::NanField | Corruption::Text | Corruption::MissingField) && first_bad.is_none() {
                first_bad = Some(i as u64 + 2);
            }
            text.push_str(&line);
        }
        match (parse_imu_csv(text.as_bytes()), first_bad) {
            (Ok(samples), None) => {
                prop_assert_eq!(samples.len(), rows.len());
                for (s, (a, _)) in samples.iter().zip(&rows) {
                    prop_assert_eq!(s.accel, *a);
                }
            }
            (Err(TraceError::MalformedRow { row, .. }), Some(bad)) => prop_assert_eq!(row, bad),
            (other, bad) => prop_assert!(false, "got {:?}, first bad row {:?}", other.map(|s| s.len()), bad),
        }
    }
}

#[test]
fn seconds_header_converts_to_milliseconds() {
    let text = "t_s,rssi_dbm,seq,tx_dbm\n0.0,-50,1,\n0.1,-52,2,7\n0.2505,-51,4,7\n";
    let s = parse_rssi_csv(text.as_bytes()).unwrap();
    assert_eq!(s.iter().map(|x| x.t_ms).collect::<Vec<_>>(), vec![0, 100, 250]);
    assert_eq!(s[0].tx_dbm, None);
    assert_eq!(s[1].tx_dbm, Some(7.0));
}
