//! Encodes one sequence in VBR and CBR mode, writes the streams, reads them
//! back and checks the decoded features against the in-memory
//! reconstruction.
//!
//! cargo run --release --example bitstream_roundtrip

use vrvq::bitstream::read_stream;
use vrvq::{
    cbr_encode, measure_bitrate, pack, synth_feature_dataset, train_codebooks, vrvq_encode, ImportanceNet,
    KMeansConfig, StreamParams, SynthSpec,
};

fn main() -> vrvq::Result<()> {
    let data = synth_feature_dataset(&SynthSpec::default(), 3)?;
    let clean: Vec<_> = data.iter().map(|p| p.clean.clone()).collect();
    let model = train_codebooks(&clean, 8, 6, &KMeansConfig::default(), 3)?.model;
    let net = ImportanceNet::init(model.dim(), 16, 3);
    let z = &clean[0];
    let params = StreamParams::for_model(&model, z.frame_rate);
    let dir = std::env::temp_dir().join("vrvq_bitstream_roundtrip");
    std::fs::create_dir_all(&dir).map_err(vrvq::Error::RawIo)?;

    for (name, enc) in [
        ("vbr", vrvq_encode(&model, &net, z, 8.0)?),
        ("cbr", cbr_encode(&model, z, 4)?),
    ] {
        let stream = pack(&enc, &params)?;
        let path = dir.join(format!("{name}.vrvq"));
        stream.save(&path)?;
        let (unpacked, _) = read_stream(&path)?;
        let decoded = unpacked.decode(&model)?;
        let rate = measure_bitrate(&stream);
        println!(
            "{name}: {} frames, {} payload bits, {:.4} kbps ({:.5} kbps side info), exact: {}",
            unpacked.depths.len(),
            stream.payload_bits,
            rate.total_kbps,
            rate.side_info_kbps,
            decoded == enc.reconstruct(&model)?
        );
    }
    Ok(())
}
