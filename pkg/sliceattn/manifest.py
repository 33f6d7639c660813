"""
Run manifests

Every command writes a manifest.yaml into its output directory holding the command, the package
version, the complete configuration snapshot, the seeds and the paths of the artifacts written.
It carries no timestamps, so identical runs produce identical manifests.  A checkpoint is loaded
with the pipeline configuration of the manifest next to it.
"""
from pathlib import Path

import yaml
from yaml import YAMLError

from .sliceattn_errors import SliceattnFileFormatError
from .configkeys import ManifestKeys, ConfigSections
from .configfile import build_run_config, config_snapshot, merge_sections
from .utils import write_text_atomic, read_bytes

MANIFEST_FILENAME = "manifest.yaml"

try:
    from . import __version__ as VERSION
    from . import COMMIT_ID
except ImportError:
    VERSION = "0.0.0"
    COMMIT_ID = "N/A"

class RunManifest(object):
    """
    Reproducibility record of one command

    :param command: name of the command
    :param run_config: RunConfig used by the command
    :param artifacts: list of paths written (stored relative to the output directory when inside it)
    """

    def __init__(self, command, run_config, artifacts=None):
        self.command = command
        self.run_config = run_config
        self.artifacts = list(artifacts or [])
        self.version = VERSION
        self.commit_id = COMMIT_ID

    @property
    def seeds(self):
        """
        Every seed of the configuration by section
        """
        return {ConfigSections.PHANTOM: self.run_config.phantom.seed,
                ConfigSections.PIPELINE: self.run_config.pipeline.init_seed,
                ConfigSections.TRAIN: self.run_config.train.seed}

    def to_dict(self, directory=None):
        """
        Manifest content; artifact paths are made relative to directory where possible
        """
        return {ManifestKeys.COMMAND: self.command,
                ManifestKeys.VERSION: self.version,
                ManifestKeys.COMMIT_ID: self.commit_id,
                ManifestKeys.CONFIG: config_snapshot(self.run_config),
                ManifestKeys.SEEDS: self.seeds,
                ManifestKeys.ARTIFACTS: [_relative(path, directory) for path in self.artifacts]}

def _relative(path, directory):
    path = Path(path)
    if directory is not None:
        try:
            return path.relative_to(directory).as_posix()
        except ValueError:
            pass
    return path.as_posix()

def format_manifest(manifest, directory=None):
    """
    YAML text of a manifest with a stable key order
    """
    return yaml.safe_dump(manifest.to_dict(directory), default_flow_style=False, sort_keys=True)

def write_manifest(directory, manifest):
    """
    Write manifest.yaml into directory

    :returns: path written
    """
    path = Path(directory) / MANIFEST_FILENAME
    write_text_atomic(path, format_manifest(manifest, directory))
    return path

def read_manifest(path):
    """
    Read a manifest file

    :returns: RunManifest
    :raises SliceattnIOError: if the file cannot be read
    :raises SliceattnFileFormatError: if the content is not a manifest
    """
    try:
        content = yaml.safe_load(read_bytes(path).decode("utf-8"))
    except (YAMLError, UnicodeDecodeError) as error:
        raise SliceattnFileFormatError("Manifest '{}' is not valid YAML: {}".format(path, error))
    if not isinstance(content, dict) or not isinstance(content.get(ManifestKeys.CONFIG), dict):
        raise SliceattnFileFormatError("Manifest '{}' has no '{}' section".format(path, ManifestKeys.CONFIG))
    manifest = RunManifest(content.get(ManifestKeys.COMMAND, ""),
                           build_run_config(merge_sections(content[ManifestKeys.CONFIG])),
                           content.get(ManifestKeys.ARTIFACTS, []))
    manifest.version = content.get(ManifestKeys.VERSION, manifest.version)
    manifest.commit_id = content.get(ManifestKeys.COMMIT_ID, manifest.commit_id)
    return manifest

def manifest_for_checkpoint(checkpoint_path):
    """
    Manifest stored next to a checkpoint

    :raises SliceattnIOError: if there is none
    """
    return read_manifest(Path(checkpoint_path).parent / MANIFEST_FILENAME)
