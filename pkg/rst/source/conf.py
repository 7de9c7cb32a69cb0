# -*- coding: utf-8 -*-
#
# Blockgate documentation build configuration file.

import datetime
import os
import sys

# Make the package importable for autodoc without installing it.
sys.path.insert(0, os.path.abspath(os.path.join('..', '..')))

extensions = ['sphinx.ext.autodoc', 'sphinx.ext.coverage', 'sphinx.ext.viewcode']

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = u'Blockgate'
copyright = str(datetime.datetime.now().year) + u', Blockgate Developers'

version = '0.1'
release = '0.1.0'

exclude_patterns = []
pygments_style = 'sphinx'

# Document members in source order, matching the module docstrings.
autodoc_member_order = 'bysource'

html_theme = 'default'
html_style = None  # Convince readthedocs to use the default theme indeed
html_static_path = ['_static']
htmlhelp_basename = 'blockgatedoc'
