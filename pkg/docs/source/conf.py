# Sphinx configuration for the taxorag documentation.

import sys
import os.path

sys.path.insert(0, os.path.abspath('../..'))

from taxorag import __version__ as version  # noqa: E402

project = 'taxorag'
copyright = '2026, the taxorag developers'
author = 'the taxorag developers'
release = version

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.doctest',
    'sphinx.ext.intersphinx',
    'sphinx.ext.viewcode',
    'numpydoc',
]

source_suffix = '.rst'
master_doc = 'index'
exclude_patterns = []
pygments_style = 'sphinx'

# Keep API pages in source order (pipeline order within each module).
add_module_names = True
autodoc_member_order = "bysource"
autodoc_default_options = {"members": True}
numpydoc_show_class_members = False

html_theme = 'nature'
htmlhelp_basename = 'taxoragdoc'

intersphinx_mapping = {
    'python': ('https://docs.python.org/3', None),
    'numpy': ('https://numpy.org/doc/stable/', None),
}
