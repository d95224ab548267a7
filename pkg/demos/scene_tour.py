"""A walk through the scene layer: screens, cameras, eyes, one sample.

Run from the repo root:  python3 demos/scene_tour.py
"""

import numpy as np

import gazebench.scene as scene

# The two stock layouts differ only in where the camera sits. Profile U
# centres it behind the screen midpoint; profile I hangs it 30 mm above
# the top edge, which is what a webcam on a laptop lid looks like.
for pid in ("U", "I"):
    p = scene.default_profile(pid)
    print(f"profile {pid}: camera at {p.camera.position_mm}, "
          f"screen {p.screen.width_mm:.0f}x{p.screen.height_mm:.0f} mm, "
          f"noise sigma {p.noise_sigma}")

profile = scene.default_profile("U")

# Fixation grids are named lattices on the screen, optionally restricted
# to a sub-region (profile U keeps its targets in the band above the
# camera so the vertical gaze range stays one-sided).
for gid, g in sorted(profile.grids.items()):
    pts = g.build(profile.screen)
    ys = [t.position_screen_mm[1] for t in pts]
    print(f"grid {gid}: {len(pts)} points, screen-y {min(ys):.0f}..{max(ys):.0f} mm")

# A cohort draw is fully seeded: per-user eye anatomy (interocular
# distance, eyeball radius, kappa offset) plus a head-pose lattice.
cohort = scene.generate_cohort(2, profile, master_seed=7)
for user in cohort.users:
    e = user.spec.eyes
    print(f"user {user.user_id}: interocular {e.interocular_mm:.1f} mm, "
          f"kappa {e.kappa_deg:.2f} deg, "
          f"{sum(len(s.samples) for s in user.sessions)} samples")

# One sample ties it together: a target on the screen, both eyes posed
# so their visual axes meet there (vergence), and the kappa offset
# rotating each optical axis away from the visual one.
user = cohort.users[0]
sess = user.sessions[0]
s = sess.samples[0]
print(f"\nsample 0 of session 0 (head at {sess.head_pose.position_mm}):")
print(f"  target on screen   {s.target.position_screen_mm} mm")
print(f"  target in world    {s.target.position_mm} mm")

# The gaze rays (one per eye) should both pass through the target: the
# residual distance from ray to target is vergence closure error.
for name, ray in zip("LR", s.gaze_rays):
    to_target = s.target.position_mm - ray.origin
    miss = np.linalg.norm(np.cross(ray.direction, to_target))
    print(f"  {name} gaze ray from {np.round(ray.origin, 1)}, "
          f"misses target by {miss:.2e} mm")

# The camera projects exact 3D landmarks to exact 2D pixels.
print("  projected landmarks:")
for k in ("outer_left", "iris_left", "outer_right"):
    print(f"    {k:12s} {np.round(s.landmarks_2d[k], 1)} px")
print(f"  camera-to-target distance {s.camera_distance_mm:.1f} mm")
