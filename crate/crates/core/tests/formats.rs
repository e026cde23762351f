//! On-disk formats checked against byte layouts written out by hand.

use std::io::Write;

use dldr::data::{corrupt_labels, load_idx, synthetic_blobs, NoiseRecord};
use dldr::trajectory::{load_all, StepMeta, TrajectoryWriter};
use dldr::Error;
use flate2::write::GzEncoder;
use flate2::Compression;

fn idx_images(pixels: &[[u8; 4]]) -> Vec<u8> {
    let mut b = vec![0, 0, 8, 3];
    b.extend_from_slice(&(pixels.len() as u32).to_be_bytes());
    b.extend_from_slice(&2u32.to_be_bytes());
    b.extend_from_slice(&2u32.to_be_bytes());
    for p in pixels {
        b.extend_from_slice(p);
    }
    b
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut b = vec![0, 0, 8, 1];
    b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    b.extend_from_slice(labels);
    b
}

fn gz(bytes: &[u8]) -> Vec<u8> {
    let mut e = GzEncoder::new(Vec::new(), Compression::default());
    e.write_all(bytes).unwrap();
    e.finish().unwrap()
}

#[test]
fn three_image_idx_pair_plain_and_gzipped() {
    let dir = tempfile::tempdir().unwrap();
    let images = idx_images(&[[0, 255, 51, 102], [255, 255, 0, 0], [1, 2, 3, 4]]);
    let labels = idx_labels(&[7, 0, 3]);
    for (suffix, img, lab) in [("", images.clone(), labels.clone()), (".gz", gz(&images), gz(&labels))] {
        let ip = dir.path().join(format!("img{suffix}"));
        let lp = dir.path().join(format!("lab{suffix}"));
        std::fs::write(&ip, img).unwrap();
        std::fs::write(&lp, lab).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.inputs.shape(), &[3, 1, 2, 2]);
        assert_eq!(ds.labels, vec![7, 0, 3]);
        assert_eq!(ds.num_classes, 8);
        assert_eq!(ds.inputs.row(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(ds.inputs.row(2)[3], 4.0 / 255.0);
    }
}

#[test]
fn idx_count_mismatch_and_bad_magic_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let ip = dir.path().join("img");
    let lp = dir.path().join("lab");
    std::fs::write(&ip, idx_images(&[[0; 4], [0; 4]])).unwrap();
    std::fs::write(&lp, idx_labels(&[1, 2, 3])).unwrap();
    assert!(matches!(load_idx(&ip, &lp), Err(Error::Format(_))));

    let mut bad = idx_labels(&[1, 2]);
    bad[3] = 9;
    std::fs::write(&lp, bad).unwrap();
    assert!(matches!(load_idx(&ip, &lp), Err(Error::Format(_))));

    assert!(matches!(load_idx(&dir.path().join("missing"), &lp), Err(Error::Io { .. })));
}

#[test]
fn dlnz_layout_for_ten_labels_at_c_point_eight() {
    let ds = synthetic_blobs(3, 4, 2, 1.0, 0).unwrap().truncate(10).unwrap();
    let (noisy, record) = corrupt_labels(&ds, 0.8, 7).unwrap();
    let bytes = record.to_bytes();

    assert_eq!(&bytes[0..4], b"DLNZ");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 10);
    assert_eq!(f64::from_le_bytes(bytes[16..24].try_into().unwrap()), 0.8);
    assert_eq!(u64::from_le_bytes(bytes[24..32].try_into().unwrap()), 7);
    let mask = u16::from_le_bytes(bytes[32..34].try_into().unwrap());
    assert_eq!(mask >> 10, 0, "padding bits must stay clear");
    assert_eq!(mask.count_ones(), 8);
    assert_eq!(bytes.len(), 32 + 2 + 8 * 4);

    // Replacement labels follow in index order.
    let mut k = 0;
    for i in 0..10 {
        if mask >> i & 1 == 1 {
            let off = 34 + 4 * k;
            let l = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
            assert!(l < 3);
            assert_eq!(noisy.labels[i], l);
            k += 1;
        } else {
            assert_eq!(noisy.labels[i], ds.labels[i]);
        }
    }

    let golden = std::fs::read(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/noise_c08_n10_seed7.dlnz")).unwrap();
    assert_eq!(bytes, golden);
    assert_eq!(NoiseRecord::from_bytes(&golden).unwrap(), record);
}

#[test]
fn dlnz_rejects_truncation_and_trailing_bytes() {
    let ds = synthetic_blobs(2, 5, 2, 1.0, 0).unwrap();
    let (_, record) = corrupt_labels(&ds, 0.5, 1).unwrap();
    let bytes = record.to_bytes();
    assert!(matches!(NoiseRecord::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(NoiseRecord::from_bytes(&long), Err(Error::Format(_))));
}

#[test]
fn dltr_records_are_laid_out_back_to_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.dltr");
    let mut w = TrajectoryWriter::create(&path).unwrap();
    w.record(StepMeta { epoch: 0, global_step: 0 }, &[1.0, -2.0]).unwrap();
    w.record(StepMeta { epoch: 3, global_step: 12 }, &[0.5, 4.0]).unwrap();
    w.finish().unwrap();

    let mut want = b"DLTR".to_vec();
    want.extend_from_slice(&1u32.to_le_bytes());
    want.extend_from_slice(&2u64.to_le_bytes());
    want.extend_from_slice(&2u64.to_le_bytes());
    for (e, s, xs) in [(0u32, 0u64, [1.0f64, -2.0]), (3, 12, [0.5, 4.0])] {
        want.extend_from_slice(&e.to_le_bytes());
        want.extend_from_slice(&s.to_le_bytes());
        for x in xs {
            want.extend_from_slice(&x.to_le_bytes());
        }
    }
    assert_eq!(std::fs::read(&path).unwrap(), want);

    let t = load_all(&path).unwrap();
    assert_eq!(t.t(), 2);
    assert_eq!(t.column(1), &[0.5, 4.0]);
    assert_eq!(t.metas[1], StepMeta { epoch: 3, global_step: 12 });
}
