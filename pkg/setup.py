from setuptools import setup, find_packages

with open("taxorag/version.py", "r") as f:
    exec(f.read())

setup(
    name="taxorag",
    version=__version__,
    packages=find_packages(exclude=["tests", "tests.*"]),

    # Metadata for PyPi
    description=("Zero-shot hierarchical text classification driven by "
                 "retrieved label-taxonomy subgraphs."),
    license="GPLv2",
    classifiers=[
        "Development Status :: 3 - Alpha",

        "Intended Audience :: Developers",
        "Intended Audience :: Science/Research",

        "License :: OSI Approved :: GNU General Public License v2 (GPLv2)",

        "Operating System :: POSIX :: Linux",
        "Operating System :: Microsoft :: Windows",
        "Operating System :: MacOS",

        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
    ],
    keywords="asyncio classification taxonomy retrieval llm",

    # Requirements
    python_requires=">=3.10",
    install_requires=[
        "sentinel>=0.1.1",
        "numpy>=1.22",
        "networkx>=2.8",
        "pandas>=1.4",
        "scikit-learn>=1.1",
        "pydantic>=2.0",
        "openai>=1.0",
        "httpx>=0.23",
        "backoff>=2.0",
        "python-dotenv>=0.21",
    ],

    entry_points={
        "console_scripts": [
            "taxorag=taxorag.cli:main",
        ],
    },
)
