mod common;

use mfdet::data::SamplingSpec;

#[test]
fn batches_ignore_labels_of_context_frames() {
    for (seed, spec) in [
        (1, SamplingSpec::Adjacent { n: 3 }),
        (2, SamplingSpec::Stepped { n: 3, step: 3 }),
        (
            3,
            SamplingSpec::Explicit {
                offsets: vec![-6, -3, -1, 0],
            },
        ),
    ] {
        let problems = common::weak_supervision_violations(seed, &spec);
        assert!(problems.is_empty(), "{spec}: {problems:?}");
    }
}
