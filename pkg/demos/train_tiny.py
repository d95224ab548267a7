"""Train the regressor end to end on a four-user cohort, both feature modes.

Run from the repo root:  python3 demos/train_tiny.py
About a minute: rendering ~900 frames, then SGD on each feature mode.
"""

import os
import tempfile

import numpy as np

import gazebench.config as cfgmod
import gazebench.estimator as est
import gazebench.pipeline as pipe
import gazebench.protocol as proto

# The desk-scale camera-centred profile: 5 head distances, 47 fixation
# points per distance. Four users keep the demo quick.
profile = cfgmod.build_scene_profiles(cfgmod.default_config())["U"]
ds = pipe.build_dataset(profile, 4, master_seed=77)
ids = ds.user_ids()
print(f"dataset: {len(ds.users)} users, {ds.n_samples()} samples; "
      f"holding out user {ids[0]}")


def held_out_error(model, mode):
    x_te, y_te, meta = pipe.features_and_targets(ds, mode=mode, user_ids=ids[:1])
    pred = est.denormalize_points(model.predict(x_te), ds.screen_w, ds.screen_h)
    true = est.denormalize_points(y_te, ds.screen_w, ds.screen_h)
    return proto.summarize([proto.angular_error(p, t, m.camera_distance_mm)
                            for p, t, m in zip(pred, true, meta)])


# Act one: landmark features. Thirteen numbers per sample (normalized
# canvas landmarks plus the border-fraction depth cue), so the vector
# head converges in seconds.
x_tr, y_tr, _ = pipe.features_and_targets(ds, mode="landmarks", user_ids=ids[1:])
model = est.build_model(est.default_vector_arch(x_tr.shape[1]), seed=5)
est.train(model, x_tr, y_tr,
          est.Hyperparams(learning_rate=3e-3, momentum=0.9, epochs=300,
                          batch_size=32), seed=5, provenance="demo-landmarks")
st = held_out_error(model, "landmarks")
print(f"landmark features: held-out mean {st.mean:.2f} deg, "
      f"median {st.median:.2f} deg over {st.n} fixations")

# Act two: raw canvas images through the conv net. Before trusting the
# training loop, trust the gradients: backprop against central
# differences on a throwaway model.
x_tr, y_tr, _ = pipe.features_and_targets(ds, mode="image", user_ids=ids[1:])
check = est.build_model(est.default_image_arch(), seed=1)
for name, p, _ in check.params():
    if p.ndim == 1:
        p += 0.03  # off the ReLU kink, where both sides agree
rel = est.grad_check(check, x_tr[:4], y_tr[:4], seed=1)
print(f"gradient check, max relative error {rel:.2e}")

# Expect a long flat stretch before the loss drops: the net first has
# to discover features that survive global average pooling at all.
model = est.build_model(est.default_image_arch(), seed=5)
result = est.train(model, x_tr, y_tr,
                   est.Hyperparams(learning_rate=2e-2, momentum=0.9,
                                   epochs=320, batch_size=32),
                   seed=5, provenance="demo-image")
h = result.history
print("image loss curve:",
      "  ".join(f"ep{e}={h[e]:.4f}" for e in (0, 80, 160, 240, 319)))
st = held_out_error(model, "image")
print(f"image features: held-out mean {st.mean:.2f} deg, "
      f"median {st.median:.2f} deg over {st.n} fixations")

# Round-trip the weights; the reload must predict identically.
x_te, _, _ = pipe.features_and_targets(ds, mode="image", user_ids=ids[:1])
with tempfile.TemporaryDirectory() as tmp:
    path = os.path.join(tmp, "demo.json")
    est.save_weights(model, path)
    back = est.load_weights(path, expect_arch=model.arch)
    same = np.array_equal(back.predict(x_te), model.predict(x_te))
print(f"weights round trip, predictions identical: {same}")
