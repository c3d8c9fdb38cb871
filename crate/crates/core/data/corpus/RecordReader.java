package corpus;

import java.io.DataInputStream;
import java.io.InputStream;

public class RecordReader {
    public long total(InputStream source) {
        DataInputStream in = new DataInputStream(source);
        long sum = 0;
        int count = in.readInt();
        for (int i = 0; i < count; i++) {
            sum += in.readLong();
        }
        return sum;
    }
}
