import pytest

from dsm.errors import ConfigError
from dsm.settings import Settings, SettingsManager


@pytest.fixture
def no_default_config(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def test_defaults(no_default_config):
    manager = SettingsManager(environ={})
    assert manager.config_path is None
    assert manager.settings == Settings()
    assert manager.settings.feedback.top_k == 10
    assert manager.settings.em.tol == 1e-10


def test_file_then_environment(no_default_config):
    path = no_default_config / "dsm.conf"
    path.write_text(
        "# comment\nRETRIEVAL_MU=500\nFEEDBACK_ALPHA=0.25\nEXPERIMENT_METHODS=dsm-,dsm\n",
        encoding="utf-8",
    )
    manager = SettingsManager(str(path), environ={"DSM_RETRIEVAL_MU": "2000", "HOME": "/root"})
    assert manager.settings.retrieval.mu == 2000.0
    assert manager.settings.feedback.alpha == 0.25
    assert manager.settings.experiment.methods == "dsm-,dsm"


def test_section_prefixes_do_not_collide(no_default_config):
    manager = SettingsManager(environ={"DSM_EM_MAX_ITER": "50", "DSM_FEEDBACK_EM_MAX_ITER": "7"})
    assert manager.settings.em.max_iter == 50
    assert manager.settings.feedback.em_max_iter == 7


def test_picks_up_default_path(no_default_config):
    (no_default_config / "config").mkdir()
    (no_default_config / "config" / "dsm.conf").write_text("PROFILE_POINTS=12\n", encoding="utf-8")
    manager = SettingsManager(environ={})
    assert manager.settings.profile.points == 12


def test_unknown_key_in_file(no_default_config):
    path = no_default_config / "dsm.conf"
    path.write_text("RETRIEVAL_MUU=5\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="RETRIEVAL_MUU"):
        SettingsManager(str(path), environ={})


def test_unknown_environment_key_is_ignored(no_default_config):
    manager = SettingsManager(environ={"DSM_NOT_A_SETTING": "1", "DSM_LOG_LEVEL": "DEBUG"})
    assert manager.settings == Settings()


def test_bad_value(no_default_config):
    with pytest.raises(ConfigError, match="expects int"):
        SettingsManager(environ={"DSM_SYNTHETIC_NUM_DOCS": "many"})


def test_missing_file(no_default_config):
    with pytest.raises(ConfigError):
        SettingsManager(str(no_default_config / "absent.conf"), environ={})


def test_as_dict_is_nested(no_default_config):
    data = SettingsManager(environ={}).as_dict()
    assert set(data) == {"retrieval", "feedback", "em", "profile", "experiment", "synthetic"}
    assert data["synthetic"]["vocab_size"] == 500
