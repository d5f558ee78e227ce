import numpy as np, time, sys
import altfreeze as af

SHAPE = (3, 8, 24, 24)

def run(train_ds, tprobe, sprobe, freezing, seed, epochs):
    cfg = af.TrainConfig(batch_size=8, epochs=epochs, lr=0.05, seed=seed, freezing=freezing,
                         flip=True, cutout=False, noise=False, fake_clip_augs=False)
    model = af.build_model(af.reference_model_spec(SHAPE), seed=seed)
    model, rows = af.train(model, train_ds, cfg)
    rep = af.run_eval(model, {"T": tprobe, "S": sprobe})
    return rep.aucs["T"], rep.aucs["S"], rows[-1]["loss"]

CONFIGS = {
    "A120": dict(mix=(1.0,1.0,1.0), probe=32, epochs=120, ss=0.25, tc=((1,1),(2,2))),
    "B140": dict(mix=(1.0,1.0,1.0), probe=48, epochs=140, ss=0.25, tc=((1,1),(2,2))),
    "C140": dict(mix=(0.8,1.2,2.0), probe=48, epochs=140, ss=0.0,  tc=((1,1),(2,2))),
}

out = open("/root/pkg/.calib/sweep1.txt", "a")
for name, c in CONFIGS.items():
    spec = af.DatasetSpec(clip_shape=SHAPE, train_real=160, train_fake=160,
                          probe_real=c["probe"], probe_fake=c["probe"],
                          train_mix=c["mix"], blend_same_scene_prob=c["ss"],
                          train_tcount=c["tc"][0], probe_tcount=c["tc"][1])
    train_ds = af.build_training_set(spec)
    tp = af.build_temporal_set(spec)
    sp = af.build_spatial_set(spec)
    for mode in (False, True):
        ms = []
        for seed in (0, 1, 2):
            t0 = time.time()
            T, S, loss = run(train_ds, tp, sp, mode, seed, c["epochs"])
            ms.append((T + S) / 2)
            print(f"{name} frz={int(mode)} s={seed}: T={T:.3f} S={S:.3f} mean={(T+S)/2:.3f} lossE={loss:.3f} ({time.time()-t0:.0f}s)",
                  file=out, flush=True)
        print(f"{name} frz={int(mode)} MEAN={np.mean(ms):.4f}", file=out, flush=True)
print("DONE", file=out, flush=True)
