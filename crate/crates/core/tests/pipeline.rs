use std::fs::File;
use std::io::{BufReader, BufWriter, Write};

use wiretap_core::oracle::{exact_mi, Evaluation, Target};
use wiretap_core::pipeline::{config_from_header, generate, measure_ber, read_dataset, write_dataset};
use wiretap_core::{ChannelModel, CodeSpec, SystemConfig};

fn system(channel: ChannelModel) -> SystemConfig {
    SystemConfig::symmetric(3, 1, CodeSpec::hamming74(), channel, true, 11).unwrap()
}

#[test]
fn dataset_file_round_trip_regenerates() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.wtp");
    for channel in [ChannelModel::bsc(0.1).unwrap(), ChannelModel::awgn_snr_db(1.0).unwrap()] {
        let cfg = system(channel);
        let batch = generate(&cfg, 300).unwrap();
        let mut w = BufWriter::new(File::create(&path).unwrap());
        write_dataset(&mut w, &cfg, &batch).unwrap();
        w.flush().unwrap();
        drop(w);

        let (header, read) = read_dataset(&mut BufReader::new(File::open(&path).unwrap())).unwrap();
        assert_eq!(header.count, 300);
        assert_eq!(read.m, batch.m);
        assert_eq!(read.z_eve, batch.z_eve);
        assert_eq!(read.y_bob, batch.y_bob);

        let again = generate(&config_from_header(&header).unwrap(), 300).unwrap();
        assert_eq!(again.x, batch.x);
        assert_eq!(again.z_eve, batch.z_eve);
    }
}

#[test]
fn leakage_shrinks_as_eve_gets_noisier() {
    let mut last = f64::INFINITY;
    for p in [0.0, 0.1, 0.2, 0.3, 0.5] {
        let mi = exact_mi(&system(ChannelModel::bsc(p).unwrap()), Target::Secret, Evaluation::Exhaustive)
            .unwrap()
            .value_bits;
        assert!(mi <= last + 1e-12, "p = {p}: {mi} > {last}");
        last = mi;
    }
    assert!(last.abs() < 1e-12);
}

#[test]
fn hamming_corrects_single_errors_on_clean_link() {
    let ber = measure_ber(&system(ChannelModel::bsc(0.0).unwrap()), 500).unwrap();
    assert_eq!(ber.raw_ber, 0.0);
    assert_eq!(ber.secret_ber, 0.0);
}
