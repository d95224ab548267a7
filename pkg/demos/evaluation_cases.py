"""The five evaluation cases on the micro cohorts, end to end.

Run from the repo root:  python3 demos/evaluation_cases.py
Uses the micro scale, so this finishes in well under a minute; the
absolute errors are poor at that size and that is fine, the point is
the machinery: leave-one-out, pretraining reuse, calibration splits.
"""

import tempfile

import gazebench.config as cfgmod
import gazebench.pipeline as pipe
import gazebench.protocol as proto

cfg = cfgmod.micro_config()
print("the cases:")
for cid in sorted(proto.CASES):
    spec = proto.case_spec(cid)
    print(f"  {cid}: {spec.description}")

with tempfile.TemporaryDirectory() as out:
    datasets = pipe.generate_datasets(cfg, out, write=False)
    for pid, ds in sorted(datasets.items()):
        print(f"\nprofile {pid}: {len(ds.users)} users, {ds.n_samples()} samples")

    # One run seed; the pretrained model for cases 2 and 4 is trained
    # once and cached under the output directory.
    summary = pipe.run_cases((1, 2, 3, 4, 5), (1,), datasets, cfg, out_dir=out)

    print(f"\n{'case':<6}{'mean':>8}{'median':>8}{'iqr':>8}")
    for cid in (1, 2, 3, 4, 5):
        st = summary.per_case[cid][1]
        print(f"{cid:<6}{st.mean:>8.2f}{st.median:>8.2f}{st.iqr:>8.2f}")

    flags = summary.flags_by_seed()[1]
    print(f"\ncalibration gap (case5 median / case4 median): "
          f"{flags['calibration_gap']:.2f}")
    print(f"cases 2 and 3 comparable: {flags['comparable_2_3']}")
    print(f"case 1 most compact: {flags['compact_1']}")
