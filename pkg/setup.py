from setuptools import setup, find_packages

setup(
    name="coopnet",
    version="0.1.0",
    packages=find_packages(exclude=['tests', 'tests.*']),
    install_requires=[
        'click',
        'rich',
        'python-dotenv',
        'tqdm',
        'numpy',
        'scipy',
        'pandas',
        'networkx',
    ],
    entry_points={
        'console_scripts': [
            'coopnet=src.cli:cli',
        ],
    },
)
