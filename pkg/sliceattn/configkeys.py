"""
Definitions of section and key names for configuration files and manifests
"""

#pylint: disable=too-few-public-methods
class _KeyCollection(object):
    """
    Base class with the key listing helper
    """

    @classmethod
    def get_all(cls):
        """
        Get a list of all names defined by the class

        :return List of all names (baseclass and any subclass names if run on a subclass)
        """
        all_keys = []
        for attribute in dir(cls):
            if not attribute.startswith('_') and not callable(getattr(cls, attribute)):
                all_keys.append(getattr(cls, attribute))

        return all_keys

class ConfigSections(_KeyCollection):
    """
    Top level sections of a configuration file
    """
    PHANTOM = 'phantom'
    PIPELINE = 'pipeline'
    ATTENTION = 'attention'
    TRAIN = 'train'
    EVAL = 'eval'

class AttentionModes(_KeyCollection):
    """
    Values of the --attention switch, one per ablation configuration
    """
    NONE = 'none'
    CONTEXTUAL = 'contextual'
    SPATIAL = 'spatial'
    BOTH = 'both'

class ManifestKeys(_KeyCollection):
    """
    Keys of a run manifest
    """
    COMMAND = 'command'
    VERSION = 'version'
    COMMIT_ID = 'commit_id'
    CONFIG = 'config'
    SEEDS = 'seeds'
    ARTIFACTS = 'artifacts'

class ParameterNames(_KeyCollection):
    """
    Names of the model parameters as stored in checkpoints
    """
    CONTEXTUAL_WEIGHT = 'attention.contextual.weight'
    CONTEXTUAL_BIAS = 'attention.contextual.bias'
    SPATIAL_WEIGHT = 'attention.spatial.weight'
    SPATIAL_BIAS = 'attention.spatial.bias'
    RPN_CONV_WEIGHT = 'rpn.conv.weight'
    RPN_CONV_BIAS = 'rpn.conv.bias'
    RPN_CLS_WEIGHT = 'rpn.cls.weight'
    RPN_CLS_BIAS = 'rpn.cls.bias'
    RPN_REG_WEIGHT = 'rpn.reg.weight'
    RPN_REG_BIAS = 'rpn.reg.bias'
    PSROI_WEIGHT = 'head.psroi.weight'
    PSROI_BIAS = 'head.psroi.bias'
    FC1_WEIGHT = 'head.fc1.weight'
    FC1_BIAS = 'head.fc1.bias'
    HEAD_CLS_WEIGHT = 'head.cls.weight'
    HEAD_CLS_BIAS = 'head.cls.bias'
    HEAD_REG_WEIGHT = 'head.reg.weight'
    HEAD_REG_BIAS = 'head.reg.bias'

    # Backbone layers are numbered, see backbone_weight()/backbone_bias()
    BACKBONE_PREFIX = 'backbone.conv'
    ATTENTION_PREFIX = 'attention.'

    @staticmethod
    def backbone_weight(layer):
        """
        Name of the weight of backbone layer number layer (1-based)
        """
        return "{}{}.weight".format(ParameterNames.BACKBONE_PREFIX, layer)

    @staticmethod
    def backbone_bias(layer):
        """
        Name of the bias of backbone layer number layer (1-based)
        """
        return "{}{}.bias".format(ParameterNames.BACKBONE_PREFIX, layer)

    @staticmethod
    def is_bias(name):
        """
        True if the named parameter is a bias
        """
        return name.endswith('.bias')

    @staticmethod
    def is_attention(name):
        """
        True if the named parameter belongs to an attention module
        """
        return name.startswith(ParameterNames.ATTENTION_PREFIX)
