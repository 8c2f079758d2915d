use etnet::corpus::write_corpus;
use etnet::datagen::{gen_wave, WaveKind};
use etnet_cli::{ingest, ingest_reader, windows};
use proptest::prelude::*;

fn stream(n: usize) -> String {
    (0..n).map(|i| format!("{}\n", i as f64 * 0.5)).collect()
}

#[test]
fn stream_of_240_gives_two_windows() {
    let d = ingest_reader(stream(240).as_bytes(), "s", 120).unwrap();
    assert_eq!(d.len(), 2);
    assert_eq!(d[0].id, "0");
    assert_eq!(d[1].id, "1");
    assert_eq!(d[1].values[0], 60.0);
}

#[test]
fn remainder_is_dropped() {
    let d = ingest_reader(stream(250).as_bytes(), "s", 120).unwrap();
    assert_eq!(d.len(), 2);
    assert!(d.iter().all(|s| s.len() == 120));
    assert_eq!(d[1].values[119], 239.0 * 0.5);
}

#[test]
fn corpus_round_trips_through_writer() {
    let mut data = Vec::new();
    for (i, k) in WaveKind::ALL.into_iter().enumerate() {
        let mut s = gen_wave(k, 50, 7.3, 1.7, 0.1 * i as f64).unwrap();
        s.id = format!("w{i}");
        if i != 1 {
            s.label = Some(k.name().to_string());
        }
        data.push(s);
    }
    let mut buf = Vec::new();
    write_corpus(&mut buf, &data).unwrap();
    let back = ingest_reader(buf.as_slice(), "mem", 120).unwrap();
    assert_eq!(back, data);
}

#[test]
fn file_ingest_matches_reader() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.txt");
    std::fs::write(&path, stream(130)).unwrap();
    let d = ingest(&path, 60).unwrap();
    assert_eq!(d.len(), 2);
}

#[test]
fn malformed_row_reports_its_line() {
    let text = "a,60,normal,1,2,3\nb,60,normal,1,x,3\n";
    let err = ingest_reader(text.as_bytes(), "bad.csv", 120).unwrap_err();
    let msg = format!("{err:#}");
    assert!(msg.contains("bad.csv:2"), "{msg}");
}

#[test]
fn malformed_stream_line_is_reported() {
    let text = "1\n2\nthree\n";
    let msg = format!("{:#}", ingest_reader(text.as_bytes(), "s", 2).unwrap_err());
    assert!(msg.contains("s:3"), "{msg}");
}

#[test]
fn empty_file_is_an_error() {
    assert!(ingest_reader("".as_bytes(), "e", 120).is_err());
    assert!(ingest_reader("\n\n".as_bytes(), "e", 120).is_err());
}

#[test]
fn short_stream_and_tiny_window_are_errors() {
    assert!(ingest_reader(stream(10).as_bytes(), "s", 120).is_err());
    assert!(windows(&[1.0, 2.0], 1).is_err());
}

#[test]
fn missing_file_is_an_error() {
    assert!(ingest("/nonexistent/definitely/missing.csv", 120).is_err());
}

proptest! {
    #[test]
    fn window_count_is_integer_division(n in 2usize..400, w in 2usize..50) {
        let values: Vec<f64> = (0..n).map(|i| i as f64).collect();
        match windows(&values, w) {
            Ok(d) => {
                prop_assert_eq!(d.len(), n / w);
                for (i, s) in d.iter().enumerate() {
                    prop_assert_eq!(s.values[0], (i * w) as f64);
                }
            }
            Err(_) => prop_assert!(n < w),
        }
    }
}
