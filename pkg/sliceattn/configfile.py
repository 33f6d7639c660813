"""
YAML configuration files

A configuration file is a mapping from section names (see configkeys.ConfigSections) to flat
mappings of settings, for example::

    pipeline:
      num_images: 5
    attention:
      enable_spatial: false

Several files may be given; they are merged in order, later values replacing earlier ones.
"""
from collections import namedtuple
from dataclasses import fields, asdict

import yaml
from yaml import YAMLError

from .sliceattn_errors import SliceattnConfigError, SliceattnIOError
from .configkeys import ConfigSections
from .attention import AttentionConfig
from .detection.model import PipelineConfig
from .synthdata.phantom import PhantomSpec
from .training.optimizer import TrainConfig
from .evaluation.froc import EvalConfig

RunConfig = namedtuple('RunConfig', 'phantom pipeline train eval')

SECTION_TYPES = {
    ConfigSections.PHANTOM: PhantomSpec,
    ConfigSections.PIPELINE: PipelineConfig,
    ConfigSections.ATTENTION: AttentionConfig,
    ConfigSections.TRAIN: TrainConfig,
    ConfigSections.EVAL: EvalConfig,
}

def section_keys(section):
    """
    Setting names accepted in a section
    """
    return [item.name for item in fields(SECTION_TYPES[section]) if item.name != ConfigSections.ATTENTION]

def load_config_file(path):
    """
    Read and check one configuration file

    :returns: dict section -> dict of settings
    :raises SliceattnIOError: if the file cannot be read
    :raises SliceattnConfigError: on YAML errors, unknown sections or unknown keys
    """
    try:
        with open(path, 'rt') as file:
            content = yaml.safe_load(file)
    except OSError as error:
        raise SliceattnIOError("Unable to read config file '{}': {}".format(path, error))
    except YAMLError as error:
        raise SliceattnConfigError("Error parsing config file '{}': {}".format(path, error))
    if content is None:
        return {}
    if not isinstance(content, dict):
        raise SliceattnConfigError("Config file '{}' must hold a mapping of sections".format(path))
    for section, settings in content.items():
        if section not in SECTION_TYPES:
            raise SliceattnConfigError("Unknown section '{}' in '{}', expected one of {}".format(
                section, path, ", ".join(ConfigSections.get_all())))
        if not isinstance(settings, dict):
            raise SliceattnConfigError("Section '{}' in '{}' must be a mapping".format(section, path))
        unknown = sorted(set(settings) - set(section_keys(section)))
        if unknown:
            raise SliceattnConfigError("Unknown key(s) {} in section '{}' of '{}'".format(unknown, section, path))
    return content

def merge_sections(*contents):
    """
    Merge section dicts, later settings replacing earlier ones
    """
    merged = {}
    for content in contents:
        for section, settings in content.items():
            merged.setdefault(section, {}).update(settings or {})
    return merged

def _construct(section, settings):
    try:
        return SECTION_TYPES[section](**settings)
    except (TypeError, ValueError) as error:
        raise SliceattnConfigError("Invalid settings in section '{}': {}".format(section, error))

def build_run_config(sections):
    """
    Module configurations from merged sections; missing settings take their defaults

    :param sections: dict section -> dict of settings
    :returns: RunConfig
    """
    attention = _construct(ConfigSections.ATTENTION, sections.get(ConfigSections.ATTENTION, {}))
    pipeline_settings = dict(sections.get(ConfigSections.PIPELINE, {}))
    pipeline_settings[ConfigSections.ATTENTION] = attention
    return RunConfig(_construct(ConfigSections.PHANTOM, sections.get(ConfigSections.PHANTOM, {})),
                     _construct(ConfigSections.PIPELINE, pipeline_settings),
                     _construct(ConfigSections.TRAIN, sections.get(ConfigSections.TRAIN, {})),
                     _construct(ConfigSections.EVAL, sections.get(ConfigSections.EVAL, {})))

def load_run_config(paths, overrides=None):
    """
    Load and merge configuration files, then apply overrides

    :param paths: list of YAML files (may be empty)
    :param overrides: dict section -> dict of settings applied last (command line values)
    :returns: RunConfig
    """
    contents = [load_config_file(path) for path in paths or []]
    return build_run_config(merge_sections(*(contents + [overrides or {}])))

def _plain(value):
    if isinstance(value, dict):
        return {key: _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    return value

def config_snapshot(run_config):
    """
    Section dict of a RunConfig, loadable again with build_run_config()
    """
    pipeline = asdict(run_config.pipeline)
    attention = pipeline.pop(ConfigSections.ATTENTION)
    return _plain({ConfigSections.PHANTOM: asdict(run_config.phantom),
                   ConfigSections.PIPELINE: pipeline,
                   ConfigSections.ATTENTION: attention,
                   ConfigSections.TRAIN: asdict(run_config.train),
                   ConfigSections.EVAL: asdict(run_config.eval)})
