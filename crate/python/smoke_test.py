"""Smoke test for the tmpt_py extension.

Build first:  cargo build --release -p tmpt-py --features extension-module
Then run:     python3 python/smoke_test.py [path/to/libtmpt_py.so]
"""

import importlib.util
import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def find_library():
    if len(sys.argv) > 1:
        return sys.argv[1]
    for profile in ("release", "debug"):
        for name in ("libtmpt_py.so", "libtmpt_py.dylib", "tmpt_py.dll"):
            path = os.path.join(ROOT, "target", profile, name)
            if os.path.exists(path):
                return path
    sys.exit("extension not built; run: cargo build --release -p tmpt-py --features extension-module")


def load(tmp):
    # the interpreter wants the file named after the module
    src = find_library()
    dst = os.path.join(tmp, "tmpt_py" + (".pyd" if src.endswith(".dll") else ".so"))
    shutil.copy(src, dst)
    spec = importlib.util.spec_from_file_location("tmpt_py", dst)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def main():
    with tempfile.TemporaryDirectory() as tmp:
        t = load(tmp)

        a = t.Tensor([2, 2], [1.0, 2.0, 3.0, 4.0])
        assert (a @ t.Tensor([2, 2], [1.0, 0.0, 0.0, 1.0])).tolist() == a.tolist()
        row = t.softmax(t.Tensor([1, 3], [1.0, 2.0, 3.0])).tolist()
        assert abs(sum(row) - 1.0) < 1e-12
        assert t.leaky_relu(t.Tensor([2], [-1.0, 2.0])).tolist() == [-0.01, 2.0]

        f1 = t.macro_f1(["F", "A", "A", "A"], ["F", "F", "A", "N"], ["F", "A", "N"])
        assert abs(f1 - 0.3889) < 1e-4, f1
        k = t.cohen_kappa(["F", "F", "A", "N"], ["F", "A", "A", "N"], ["F", "A", "N"])
        assert abs(k - 0.6364) < 1e-4, k
        assert t.majority_vote(["F", "F", "A"]) == ("label", "F")
        assert t.majority_vote(["F", "A", "N"]) == ("escalate", None)
        assert t.majority_vote(["F", "A", "N"], ["A", "N", "F"]) == ("discard", None)

        data = os.path.join(tmp, "data")
        manifest = t.generate_data(data, samples_per_target=30, seed=1)
        split = os.path.join(data, "split.jsonl")
        counts = t.split(manifest, split, (0.7, 0.1, 0.2), seed=0)
        assert counts == {"train": 42, "dev": 6, "test": 12}, counts

        cfg = t.ModelConfig.tiny()
        assert cfg.ablated("baseline").prompt_tokens == 0
        assert not cfg.ablated("baseline").textual_prompt
        model = t.Model.train(split, cfg, seed=0, epochs=1)
        assert model.prompt_param_count() == 2 * cfg.prompt_tokens * cfg.to_dict()["vision_width"]
        preds = model.predict(split, "test")
        assert len(preds) == 12 and set(preds) <= {"favor", "against", "neutral"}
        ckpt = os.path.join(tmp, "m.ckpt")
        model.save(ckpt)
        assert t.Model.load(ckpt).predict(split, "test") == preds
        result = model.evaluate(split)
        assert set(result["per_target"]) == {"DT", "JB"}

        report = t.run(split, cfg, seeds=1, epochs=1)
        assert len(report["runs"]) == 1 and math.isfinite(report["mean"])

        gc = t.gradcheck()
        assert gc["passed"], gc["report"]["max_rel_error"]

        try:
            t.Tensor([2, 2], [1.0])
        except ValueError:
            pass
        else:
            raise AssertionError("bad shape accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
