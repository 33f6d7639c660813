# Sphinx configuration, see https://www.sphinx-doc.org/en/master/usage/configuration.html
import os
import sys

# autodoc imports the package from the repository root
sys.path.insert(0, os.path.abspath('../..'))

project = 'sliceattn'
copyright = '2026, The sliceattn developers'
author = 'The sliceattn developers'

extensions = ['sphinx.ext.autodoc']
templates_path = ['_templates']
exclude_patterns = []

# The runtime dependencies need not be installed to build the documentation
autodoc_mock_imports = ['numpy', 'scipy', 'appdirs', 'yaml']
autodoc_member_order = 'bysource'

html_theme = 'alabaster'
html_static_path = ['_static']
