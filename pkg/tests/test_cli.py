import shutil

import numpy as np
import pytest

from conftest import DATA
from tumorseg.cli import main, subject_id
from tumorseg.labels import RegionProbs, labels_to_regions, write_region_probs
from tumorseg.nifti import read_nifti, write_array, write_nifti
from tumorseg.synth import tumor_labels
from tumorseg.volume import LabelVolume

SUBCOMMANDS = ["preprocess", "threshold", "postprocess", "clean-gt", "loss", "evaluate"]


def golden_run(tmp_path, jobs):
    labels, post = tmp_path / f"labels{jobs}", tmp_path / f"post{jobs}"
    csv_path = tmp_path / f"report{jobs}.csv"
    j = ["--jobs", str(jobs)]
    assert main(["threshold", *j, str(DATA / "probs"), str(labels)]) == 0
    assert main(["postprocess", *j, str(labels), str(post)]) == 0
    assert main(["evaluate", *j, "--csv", str(csv_path), str(post), str(DATA / "gt")]) == 0
    return labels, csv_path.read_bytes()


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_exits_zero(cmd, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main([cmd, "--help"]) == 0
    assert "usage" in capsys.readouterr().out
    assert not any(tmp_path.iterdir())


def test_subject_id():
    assert subject_id("BraTS-GLI-00001-000-seg.nii.gz") == "BraTS-GLI-00001-000"
    assert subject_id("/a/b/BraTS-GLI-00001-000.nii") == "BraTS-GLI-00001-000"
    assert subject_id("case7.nii.gz") == "case7"


def test_preprocess_golden(tmp_path, capsys):
    out = tmp_path / "out.nii"
    assert main(["preprocess", "--plan", "zscore,rescale", str(DATA / "mri.nii"), str(out)]) == 0
    assert out.read_bytes() == (DATA / "mri_zscore_rescale.nii").read_bytes()
    line = capsys.readouterr().out.strip()
    src, *fields = line.split("\t")
    assert src == str(DATA / "mri.nii")
    stats = dict(f.split("=") for f in fields)
    assert list(stats) == ["mean", "std", "p2", "p98"]
    assert 0 <= float(stats["p2"]) < float(stats["p98"]) <= 1


def test_preprocess_missing_file(tmp_path, capsys):
    missing = tmp_path / "absent.nii"
    assert main(["preprocess", str(missing), str(tmp_path / "o.nii")]) == 2
    assert str(missing) in capsys.readouterr().err


def test_preprocess_empty_plan_copies(tmp_path):
    out = tmp_path / "copy.nii"
    assert main(["preprocess", "--plan", "", str(DATA / "mri.nii"), str(out)]) == 0
    assert out.read_bytes() == (DATA / "mri.nii").read_bytes()


def test_preprocess_figures(tmp_path):
    figs = tmp_path / "figs"
    assert main(["preprocess", "--figures", str(figs), str(DATA / "mri.nii"), str(tmp_path / "o.nii")]) == 0
    (png,) = figs.iterdir()
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_threshold_golden(tmp_path):
    src = DATA / "probs" / "BraTS-SYN-00001-000-probs.nii.gz"
    out = tmp_path / "lab.nii.gz"
    assert main(["threshold", "--wt", "0.45", "--tc", "0.4", "--et", "0.45", str(src), str(out)]) == 0
    assert out.read_bytes() == (DATA / "labels" / src.name).read_bytes()


def test_threshold_of_indicators_recovers_labels(tmp_path, rng):
    lab = tumor_labels(rng, (24, 24, 24), n_tumors=1, radius=(4, 6))
    probs = tmp_path / "ind.nii"
    write_region_probs(RegionProbs.from_regions(labels_to_regions(lab)), probs)
    out = tmp_path / "lab.nii"
    assert main(["threshold", str(probs), str(out)]) == 0
    assert read_nifti(out, labels=True).equals(lab)


def test_threshold_out_of_range(tmp_path, capsys):
    assert main(["threshold", "--wt", "1.5", "a", "b"]) == 2
    assert "(0, 1)" in capsys.readouterr().err


def test_threshold_wrong_channel_count(tmp_path):
    path = tmp_path / "two.nii"
    write_array(np.zeros((3, 3, 3, 2), np.float32), path)
    assert main(["threshold", str(path), str(tmp_path / "o.nii")]) == 2


def test_loss_combo2_at_perfect_prediction(tmp_path, capsys, rng):
    lab = tumor_labels(rng, (24, 24, 24), n_tumors=1, radius=(4, 6))
    gt, pred = tmp_path / "gt.nii", tmp_path / "pred.nii"
    write_nifti(lab, gt)
    write_region_probs(RegionProbs.from_regions(labels_to_regions(lab)), pred)
    grad = tmp_path / "grad.nii"
    assert main(["loss", "--spec", "COMBO2", "--grad-out", str(grad), str(pred), str(gt)]) == 0
    last = capsys.readouterr().out.strip().splitlines()[-1]
    assert last.startswith("loss=") and float(last[5:]) <= 2e-5
    assert grad.exists()


def test_loss_shape_mismatch(tmp_path):
    gt, pred = tmp_path / "gt.nii", tmp_path / "pred.nii"
    write_nifti(tumor_labels(np.random.default_rng(0), (20, 20, 20), 1, (3, 4)), gt)
    write_array(np.zeros((4, 4, 4, 3), np.float32), pred)
    assert main(["loss", str(pred), str(gt)]) == 2


def test_end_to_end_golden(tmp_path):
    labels, serial = golden_run(tmp_path, 1)
    _, parallel = golden_run(tmp_path, 4)
    expected = (DATA / "expected.csv").read_bytes()
    assert serial == expected
    assert parallel == expected
    for f in (DATA / "labels").iterdir():
        assert (labels / f.name).read_bytes() == f.read_bytes()


def test_evaluate_unmatched_subjects(tmp_path, capsys):
    gt = tmp_path / "gt"
    shutil.copytree(DATA / "gt", gt)
    (gt / "BraTS-SYN-00002-000-seg.nii.gz").rename(gt / "BraTS-SYN-00009-000-seg.nii.gz")
    assert main(["evaluate", str(DATA / "labels"), str(gt)]) == 2
    err = capsys.readouterr().err
    assert "BraTS-SYN-00002-000" in err and "BraTS-SYN-00009-000" in err


def test_evaluate_outputs(tmp_path, capsys):
    figs, js = tmp_path / "figs", tmp_path / "r.json"
    argv = ["evaluate", "--json", str(js), "--figures", str(figs), str(DATA / "gt"), str(DATA / "gt")]
    assert main(argv) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("subject,") and out[-1].startswith("MEAN,")
    assert len(out) == 5
    assert sorted(p.name for p in figs.iterdir()) == ["lesion_dice.png", "lesion_hd95.png"]
    assert js.read_text().lstrip().startswith("[")


def test_clean_gt_and_postprocess_files(tmp_path):
    lab = np.zeros((30, 30, 30), np.uint8)
    lab[5:15, 5:15, 5:15] = 2
    lab[25:27, 25:27, 25:27] = 2
    src = tmp_path / "in.nii"
    write_nifti(LabelVolume(lab), src)
    for cmd in ("clean-gt", "postprocess"):
        out = tmp_path / f"{cmd}.nii"
        assert main([cmd, str(src), str(out)]) == 0
        got = read_nifti(out, labels=True).data
        assert got.sum() == 2 * 1000


def test_config_file(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("postprocess: {dust_max: 5}\njobs: 2\n")
    lab = np.zeros((20, 20, 20), np.uint8)
    lab[2:4, 2:4, 2:4] = 2  # 8 voxels: dust at the default, kept at dust_max 5
    src = tmp_path / "in.nii"
    write_nifti(LabelVolume(lab), src)
    out = tmp_path / "out.nii"
    assert main(["postprocess", "--config", str(cfg), str(src), str(out)]) == 0
    assert read_nifti(out, labels=True).data.sum() == 16
    assert main(["postprocess", "--config", str(cfg), "--dust-max", "8", str(src), str(out)]) == 0
    assert read_nifti(out, labels=True).data.sum() == 0
    bad = tmp_path / "bad.yaml"
    bad.write_text("postprocess: {dust: 5}\n")
    assert main(["postprocess", "--config", str(bad), str(src), str(out)]) == 2


def test_unknown_command_is_usage_error():
    assert main(["frobnicate"]) == 2
    assert main([]) == 2
