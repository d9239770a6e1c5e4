import pathlib

TMP_TEST_DIR = pathlib.Path(__file__).parent / '.test.tmp'
