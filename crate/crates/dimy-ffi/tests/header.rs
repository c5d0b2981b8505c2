//! The generated C header must exist and declare the public surface.

#[test]
fn generated_header_covers_the_api() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/dimy.h");
    let text = std::fs::read_to_string(&header)
        .unwrap_or_else(|e| panic!("missing {}: {e}", header.display()));

    for needle in [
        "#ifndef DIMY_H",
        "typedef struct DimyDevice DimyDevice;",
        "typedef struct DimyBloomFilter DimyBloomFilter;",
        "DimyStatus dimy_device_new(",
        "DimyStatus dimy_device_tick(",
        "DimyStatus dimy_device_receive(",
        "DimyStatus dimy_device_build_cbf(",
        "DimyStatus dimy_device_build_qbf(",
        "DimyStatus dimy_bloom_new(",
        "DimyStatus dimy_bloom_intersect_popcount(",
        "DimyStatus dimy_bloom_serialize(",
        "double dimy_bloom_fpr_estimate(",
        "void dimy_buffer_free(",
        "DIMY_STATUS_ENCOUNTER_REGISTERED",
    ] {
        assert!(text.contains(needle), "header lacks `{needle}`");
    }
}
