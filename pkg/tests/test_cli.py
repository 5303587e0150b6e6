import json

import numpy as np
import pytest

from advweave.cli import main
from advweave.tensor import Tensor3, write_t3b


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def jsonl(text):
    return [json.loads(line) for line in text.splitlines() if line]


@pytest.fixture
def sim_files(tmp_path):
    rng = np.random.default_rng(0)
    image = Tensor3(rng.integers(1, 9, (1, 8, 8)))   # dense: no zeros
    noise = Tensor3(rng.integers(1, 5, (1, 8, 8)))
    filt = Tensor3(rng.integers(1, 4, (2, 3, 3)))    # 2 filters, 1 in-channel
    paths = {}
    for name, t in [("image", image), ("noise", noise), ("filters", filt)]:
        p = tmp_path / f"{name}.t3b"
        write_t3b(t, p)
        paths[name] = str(p)
    return paths, tmp_path


class TestVerifyEquivalence:
    def test_exit_zero_and_jsonl(self, capsys):
        code, out, err = run(capsys, "verify-equivalence", "--trials", "50",
                             "--seed", "1")
        assert code == 0
        lines = jsonl(out)
        assert len(lines) == 51  # 50 trials + manifest/summary line
        assert all(l["exact"] for l in lines[:-1])
        assert lines[-1]["payload"] == {"trials": 50, "failures": 0}
        assert lines[-1]["manifest"]["command"] == "verify-equivalence"

    def test_sabotage_exits_one(self, capsys):
        code, out, _ = run(capsys, "verify-equivalence", "--trials", "20",
                           "--seed", "1", "--sabotage")
        assert code == 1
        assert jsonl(out)[-1]["payload"]["failures"] > 0

    def test_zero_trials_usage_error(self, capsys):
        code, _, err = run(capsys, "verify-equivalence", "--trials", "0")
        assert code == 2

    def test_float_mode(self, capsys):
        code, out, _ = run(capsys, "verify-equivalence", "--trials", "20",
                           "--seed", "3", "--float")
        assert code == 0


class TestSimulate:
    def test_doubling_zero_skip_off(self, capsys, sim_files):
        paths, _ = sim_files
        code, out, _ = run(capsys, "simulate", "--image", paths["image"],
                           "--noise", paths["noise"], "--filters",
                           paths["filters"], "--zero-skip", "off")
        assert code == 0
        payload = json.loads(out)["payload"]
        assert payload["attacked"]["mac_issued"] == \
            2 * payload["clean"]["mac_issued"]

    def test_zero_noise_zero_skip_on(self, capsys, sim_files, tmp_path):
        paths, _ = sim_files
        zp = tmp_path / "zero.t3b"
        write_t3b(Tensor3(np.zeros((1, 8, 8), dtype=np.int64)), zp)
        code, out, _ = run(capsys, "simulate", "--image", paths["image"],
                           "--noise", str(zp), "--filters", paths["filters"],
                           "--zero-skip", "on")
        assert code == 0
        payload = json.loads(out)["payload"]
        assert payload["attacked"]["mac_executed"] == \
            payload["clean"]["mac_executed"]

    def test_corpus_mode(self, capsys, sim_files, tmp_path):
        paths, _ = sim_files
        corpus = tmp_path / "corpus"
        corpus.mkdir()
        rng = np.random.default_rng(5)
        for i in range(4):
            img = Tensor3(rng.integers(0, 9, (1, 8, 8)) *
                          (rng.random((1, 8, 8)) < 0.7))
            write_t3b(img, corpus / f"img{i}.t3b")
        code, out, _ = run(capsys, "simulate", "--corpus", str(corpus),
                           "--noise", paths["noise"], "--filters",
                           paths["filters"])
        assert code == 0
        lines = jsonl(out)
        assert len(lines) == 5  # 4 per-image lines + summary
        summary = lines[-1]["payload"]
        assert summary["n_images"] == 4
        assert {"min", "max", "mean", "std"} <= set(summary["clean_executed"])

    def test_malformed_file_usage_error(self, capsys, sim_files, tmp_path):
        paths, _ = sim_files
        bad = tmp_path / "bad.t3b"
        bad.write_bytes(b"garbage")
        with pytest.raises(SystemExit) as e:
            run(capsys, "simulate", "--image", str(bad), "--noise",
                paths["noise"], "--filters", paths["filters"])
        assert e.value.code == 2

    def test_missing_image_and_corpus(self, capsys, sim_files):
        paths, _ = sim_files
        code, _, _ = run(capsys, "simulate", "--noise", paths["noise"],
                         "--filters", paths["filters"])
        assert code == 2

    def test_tpu_preset(self, capsys, sim_files):
        paths, _ = sim_files
        code, out, _ = run(capsys, "simulate", "--image", paths["image"],
                           "--noise", paths["noise"], "--filters",
                           paths["filters"], "--config", "tpu")
        assert code == 0
        # one 8x8 conv layer fits the 65536-MAC array in one cycle
        assert json.loads(out)["payload"]["clean"]["cycles"] == 1


@pytest.fixture(scope="module")
def trained_ckpt(tmp_path_factory):
    d = tmp_path_factory.mktemp("ckpt")
    path = str(d / "model.tcnn")
    code = main(["train", "--model", path, "--seed", "0", "--epochs", "25",
                 "--samples", "250"])
    assert code == 0
    return path


class TestTrainCraftEval:
    def test_train_reports_accuracy(self, capsys, tmp_path):
        path = str(tmp_path / "m.tcnn")
        code, out, _ = run(capsys, "train", "--model", path, "--seed", "1",
                           "--epochs", "10", "--samples", "120")
        assert code == 0
        payload = json.loads(out)["payload"]
        assert payload["train_accuracy"] > 0.5
        assert (tmp_path / "m.tcnn").exists()

    def test_craft_respects_4bit_digitization(self, capsys, trained_ckpt,
                                              tmp_path):
        out_v = str(tmp_path / "v.t3b")
        code, out, err = run(capsys, "craft", "--model", trained_ckpt,
                             "--out", out_v, "--epsilon", "0.05",
                             "--iters", "4", "--samples", "80")
        assert code == 0
        payload = json.loads(out)["payload"]
        assert payload["linf_norm"] <= 0.05
        assert payload["quantized_max_magnitude_bits"] <= 4
        # published large-scale fooling rates surface as context only
        assert "90.8" in err

    def test_eval_path_equivalence(self, capsys, trained_ckpt, tmp_path):
        v_path = str(tmp_path / "v.t3b")
        assert main(["craft", "--model", trained_ckpt, "--out", v_path,
                     "--iters", "4", "--samples", "80"]) == 0
        capsys.readouterr()
        _, direct, _ = run(capsys, "eval", "--model", trained_ckpt, "--noise",
                           v_path, "--path", "direct", "--samples", "100")
        _, woven, _ = run(capsys, "eval", "--model", trained_ckpt, "--noise",
                          v_path, "--path", "interleaved", "--samples", "100")
        dp = json.loads(direct)["payload"]
        wp = json.loads(woven)["payload"]
        assert dp == wp

    def test_eval_zero_noise_zero_fooling(self, capsys, trained_ckpt,
                                          tmp_path):
        zp = str(tmp_path / "zero.t3b")
        write_t3b(Tensor3(np.zeros((1, 8, 8))), zp)
        code, out, _ = run(capsys, "eval", "--model", trained_ckpt,
                           "--noise", zp, "--samples", "60")
        assert code == 0
        assert json.loads(out)["payload"]["fooling_rate"] == 0.0

    def test_eval_requires_noise_xor_random(self, capsys, trained_ckpt):
        code, _, _ = run(capsys, "eval", "--model", trained_ckpt)
        assert code == 2

    def test_eval_random_modes(self, capsys, trained_ckpt):
        for mode in ("low", "high"):
            code, out, _ = run(capsys, "eval", "--model", trained_ckpt,
                               "--random", mode, "--samples", "60")
            assert code == 0
            assert 0.0 <= json.loads(out)["payload"]["fooling_rate"] <= 1.0

    def test_missing_model_usage_error(self, capsys):
        code, _, _ = run(capsys, "eval", "--model", "/nonexistent.tcnn",
                         "--random", "low")
        assert code == 2


class TestManifestDeterminism:
    def rerun_from_manifest(self, manifest, capsys):
        """Rebuild argv from an embedded manifest and re-execute."""
        argv = [manifest["command"]]
        if manifest["seed"] is not None:
            argv += ["--seed", str(manifest["seed"])]
        for key, val in manifest["parameters"].items():
            if val is None or isinstance(val, bool) and not val:
                continue
            flag = "--" + key.replace("_", "-")
            if key == "float":
                flag = "--float"
            argv += [flag] if val is True else [flag, str(val)]
        code = main(argv)
        return code, capsys.readouterr().out

    def test_verify_rerun_byte_identical(self, capsys):
        code, out1, _ = run(capsys, "verify-equivalence", "--trials", "30",
                            "--seed", "7", "--max-dim", "10")
        manifest = jsonl(out1)[-1]["manifest"]
        code2, out2 = self.rerun_from_manifest(manifest, capsys)
        assert code == code2 == 0
        assert out1 == out2

    def test_eval_rerun_byte_identical(self, capsys, trained_ckpt, tmp_path):
        v_path = str(tmp_path / "v.t3b")
        assert main(["craft", "--model", trained_ckpt, "--out", v_path,
                     "--iters", "3", "--samples", "60"]) == 0
        capsys.readouterr()
        args = ["eval", "--model", trained_ckpt, "--noise", v_path,
                "--seed", "5", "--samples", "80", "--path", "interleaved"]
        _, out1, _ = run(capsys, *args)
        _, out2, _ = run(capsys, *args)
        assert out1 == out2
        assert json.loads(out1)["payload"] == json.loads(out2)["payload"]
